#include "nfa/data.hpp"

#include <algorithm>
#include <cmath>

#include "nfa/error.hpp"
#include "nfa/io.hpp"

namespace nfa::data {

Dataset::Dataset(Tensor images, std::vector<std::uint32_t> labels, std::uint32_t classes, SplitTag tag)
    : images_(std::move(images)), labels_(std::move(labels)), classes_(classes), tag_(tag) {
  require(images_.rank() == 4, "dataset: images must be N x C x H x W, got " + shape_str(images_.shape()));
  require(images_.dim(0) == labels_.size(), "dataset: image and label counts differ");
  require(classes_ > 0, "dataset: class count must be positive");
  for (std::size_t i = 0; i < labels_.size(); ++i)
    require(labels_[i] < classes_, "dataset: label " + std::to_string(labels_[i]) + " at index " +
                                       std::to_string(i) + " exceeds class count");
  for (std::size_t i = 0; i < images_.size(); ++i)
    require(images_[i] >= 0.0f && images_[i] <= 1.0f, "dataset: pixel outside [0,1] at flat index " + std::to_string(i));
}

std::span<const float> Dataset::image(std::size_t i) const {
  require(i < size(), "dataset: image index out of range");
  return images_.span().subspan(i * image_size(), image_size());
}

Matrix<float> Dataset::flat() const { return images_.reshaped({size(), image_size()}); }

Matrix<float> Dataset::rows(std::span<const std::size_t> idx) const {
  const std::size_t d = image_size();
  Matrix<float> out({idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto img = image(idx[r]);
    std::copy(img.begin(), img.end(), out.row(r).begin());
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> idx, SplitTag tag) const {
  require(!idx.empty(), "dataset: empty subset");
  const std::size_t d = image_size();
  std::vector<float> pix;
  pix.reserve(idx.size() * d);
  std::vector<std::uint32_t> lab;
  for (std::size_t i : idx) {
    const auto img = image(i);
    pix.insert(pix.end(), img.begin(), img.end());
    lab.push_back(labels_.at(i));
  }
  return Dataset(Tensor({idx.size(), channels(), height(), width()}, std::move(pix)), std::move(lab), classes_, tag);
}

namespace {

// Shape masks on an s x s grid, centred at (c + oy, c + ox) with c = (s-1)/2.
// Geometry is written for s = 8 and scales with s / 8.
bool shape_mask(std::uint32_t cls, std::size_t s, double i, double j, int oy, int ox) {
  const double k = static_cast<double>(s) / 8.0;
  const double c = (static_cast<double>(s) - 1.0) / 2.0;
  const double y = i - (c + oy);
  const double x = j - (c + ox);
  switch (cls) {
    case 0:  // filled square
      return std::abs(y) <= 1.5 * k && std::abs(x) <= 1.5 * k;
    case 1:  // cross
      return (std::abs(y) <= 0.5 * k && std::abs(x) <= 2.5 * k) || (std::abs(x) <= 0.5 * k && std::abs(y) <= 2.5 * k);
    case 2: {  // hollow circle
      const double r = std::sqrt(x * x + y * y);
      return r >= 1.8 * k && r <= 3.2 * k;
    }
    case 3:  // diagonal stripe
      return std::abs(y - x) <= 1.0 * k;
    default: break;
  }
  return false;
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

Dataset gen_shapes(const ShapesConfig& cfg) {
  require(cfg.classes >= 2 && cfg.classes <= 4, "gen_shapes: class count must be 2, 3 or 4");
  require(cfg.size >= 8 && cfg.size % 2 == 0, "gen_shapes: size must be an even number >= 8");
  require(cfg.count > 0, "gen_shapes: count must be positive");
  require(cfg.noise_std >= 0.0, "gen_shapes: noise_std must be non-negative");
  require(cfg.max_offset >= 0, "gen_shapes: max_offset must be non-negative");
  Prng prng(cfg.seed);
  const std::size_t s = cfg.size;
  std::vector<float> pix(cfg.count * s * s);
  std::vector<std::uint32_t> labels(cfg.count);
  for (std::size_t n = 0; n < cfg.count; ++n) {
    const auto cls = static_cast<std::uint32_t>(n % cfg.classes);
    labels[n] = cls;
    const int oy = static_cast<int>(prng.uniform_int(-cfg.max_offset, cfg.max_offset));
    const int ox = static_cast<int>(prng.uniform_int(-cfg.max_offset, cfg.max_offset));
    const double intensity = prng.uniform(0.6, 1.0);
    float* img = pix.data() + n * s * s;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j) {
        const double base = shape_mask(cls, s, static_cast<double>(i), static_cast<double>(j), oy, ox) ? intensity : 0.0;
        const double noise = cfg.noise_std > 0.0 ? cfg.noise_std * prng.normal() : 0.0;
        img[i * s + j] = static_cast<float>(quantize8(base + noise));
      }
  }
  return Dataset(Tensor({cfg.count, 1, s, s}, std::move(pix)), std::move(labels), cfg.classes);
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const io::Bytes ib = io::read_file(images_path);
  const io::Bytes lb = io::read_file(labels_path);
  io::Reader ir(ib, images_path.string());
  io::Reader lr(lb, labels_path.string());

  const std::uint32_t imagic = ir.u32_be("image magic");
  if (imagic != 0x00000803u)
    throw ParseError(images_path.string() + ": bad image magic at byte offset 0 (expected 0x00000803)");
  const std::uint32_t n = ir.u32_be("image count");
  const std::uint32_t rows = ir.u32_be("row count");
  const std::uint32_t cols = ir.u32_be("column count");

  const std::uint32_t lmagic = lr.u32_be("label magic");
  if (lmagic != 0x00000801u)
    throw ParseError(labels_path.string() + ": bad label magic at byte offset 0 (expected 0x00000801)");
  const std::uint32_t nl = lr.u32_be("label count");
  if (nl != n)
    throw ParseError(labels_path.string() + ": label count " + std::to_string(nl) + " at byte offset 4 does not match " +
                     std::to_string(n) + " images");
  if (n == 0 || rows == 0 || cols == 0) throw ParseError(images_path.string() + ": empty image set");

  const std::size_t d = static_cast<std::size_t>(rows) * cols;
  const auto payload = ir.raw(static_cast<std::size_t>(n) * d, "pixel payload");
  const auto lpayload = lr.raw(n, "label payload");

  std::vector<float> pix(payload.size());
  for (std::size_t i = 0; i < payload.size(); ++i) pix[i] = static_cast<float>(payload[i]) / 255.0f;
  std::vector<std::uint32_t> labels(lpayload.begin(), lpayload.end());
  const std::uint32_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  return Dataset(Tensor({n, 1, rows, cols}, std::move(pix)), std::move(labels), classes);
}

Matrix<float> dequantize(const Matrix<float>& images, Prng& prng) {
  Matrix<float> out = images;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double k = std::round(static_cast<double>(images[i]) * 255.0);
    require(std::abs(static_cast<double>(images[i]) * 255.0 - k) < 1e-3 && k >= 0.0 && k <= 255.0,
            "dequantize: pixel " + std::to_string(i) + " is not on the 8-bit grid");
    out[i] = static_cast<float>((k + prng.uniform()) / 256.0);
  }
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "split: fraction must lie in (0, 1)");
  Prng prng(seed);
  std::vector<std::size_t> train, test;
  for (std::uint32_t c = 0; c < ds.classes(); ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.label(i) == c) idx.push_back(i);
    const auto order = prng.permutation(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) (k < n_train ? train : test).push_back(idx[order[k]]);
  }
  require(!train.empty() && !test.empty(), "split: one side of the split is empty");
  auto shuffle = [&](std::vector<std::size_t>& v) {
    const auto order = prng.permutation(v.size());
    std::vector<std::size_t> out(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[order[k]];
    v = std::move(out);
  };
  shuffle(train);
  shuffle(test);
  return {ds.subset(train, SplitTag::train), ds.subset(test, SplitTag::test)};
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  io::Bytes out;
  io::put_bytes(out, "NFDS");
  io::put_u32(out, kDatasetVersion);
  io::put_u32(out, static_cast<std::uint32_t>(ds.size()));
  io::put_u32(out, static_cast<std::uint32_t>(ds.channels()));
  io::put_u32(out, static_cast<std::uint32_t>(ds.height()));
  io::put_u32(out, static_cast<std::uint32_t>(ds.width()));
  io::put_u32(out, ds.classes());
  for (float v : ds.images().values()) io::put_f32(out, v);
  for (std::uint32_t l : ds.labels()) {
    require(l < 256, "dataset cache stores labels as bytes");
    out.push_back(static_cast<std::uint8_t>(l));
  }
  return out;
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& source) {
  io::Reader r(bytes, source);
  if (r.text(4, "magic") != "NFDS") throw ParseError(source + ": bad magic at byte offset 0 (expected NFDS)");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion)
    throw ParseError(source + ": unsupported version " + std::to_string(version) + " at byte offset 4");
  const std::uint32_t n = r.u32("N");
  const std::uint32_t c = r.u32("C");
  const std::uint32_t h = r.u32("H");
  const std::uint32_t w = r.u32("W");
  const std::uint32_t classes = r.u32("class count");
  if (n == 0 || c == 0 || h == 0 || w == 0) throw ParseError(source + ": zero dimension in header");
  const std::size_t count = static_cast<std::size_t>(n) * c * h * w;
  std::vector<float> pix(count);
  for (std::size_t i = 0; i < count; ++i) pix[i] = r.f32("pixel payload");
  std::vector<std::uint32_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = r.u8("label payload");
  if (r.remaining() != 0)
    throw ParseError(source + ": " + std::to_string(r.remaining()) + " trailing bytes at offset " +
                     std::to_string(r.offset()));
  return Dataset(Tensor({n, c, h, w}, std::move(pix)), std::move(labels), classes);
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
  return decode_dataset(io::read_file(path), path.string());
}

}  // namespace nfa::data
