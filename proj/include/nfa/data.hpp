#ifndef NFA_DATA_HPP
#define NFA_DATA_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nfa/prng.hpp"
#include "nfa/tensor.hpp"

namespace nfa::data {

enum class SplitTag { train, test, all };

/// Labelled images, shape [N x C x H x W], pixels in [0,1].
class Dataset {
 public:
  Dataset() = default;
  Dataset(Tensor images, std::vector<std::uint32_t> labels, std::uint32_t classes, SplitTag tag = SplitTag::all);

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t channels() const { return images_.dim(1); }
  std::size_t height() const { return images_.dim(2); }
  std::size_t width() const { return images_.dim(3); }
  std::size_t image_size() const { return channels() * height() * width(); }
  std::uint32_t classes() const noexcept { return classes_; }
  SplitTag tag() const noexcept { return tag_; }

  const Tensor& images() const noexcept { return images_; }
  const std::vector<std::uint32_t>& labels() const noexcept { return labels_; }
  std::uint32_t label(std::size_t i) const { return labels_.at(i); }
  std::span<const float> image(std::size_t i) const;

  /// Images as a [N x d] matrix, one flattened image per row.
  Matrix<float> flat() const;
  /// Rows `idx` of flat().
  Matrix<float> rows(std::span<const std::size_t> idx) const;

  Dataset subset(std::span<const std::size_t> idx, SplitTag tag) const;

 private:
  Tensor images_;
  std::vector<std::uint32_t> labels_;
  std::uint32_t classes_ = 0;
  SplitTag tag_ = SplitTag::all;
};

struct ShapesConfig {
  std::size_t count = 3000;
  std::uint32_t classes = 3;
  std::size_t size = 8;
  double noise_std = 0.1;
  int max_offset = 1;
  std::uint64_t seed = 0;
};

/// Procedural grayscale shapes: 0 filled square, 1 cross, 2 hollow circle,
/// 3 diagonal stripe. Each image gets a random integer offset in
/// [-max_offset, max_offset] per axis, an intensity in [0.6, 1.0] and
/// additive Gaussian noise; pixels are clipped to [0,1] and rounded to the
/// 8-bit grid. Labels cycle 0,1,..,classes-1 so classes are balanced.
Dataset gen_shapes(const ShapesConfig& cfg);

/// IDX reader (big-endian header, magic 0x00000803 images / 0x00000801 labels).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Uniform dequantization for density training: pixel k/255 becomes
/// (k + u) / 256 with u ~ U[0, 1). Input pixels must sit on the 8-bit grid.
Matrix<float> dequantize(const Matrix<float>& images, Prng& prng);

/// Stratified deterministic split; each class contributes round(fraction * n_c) to train.
std::pair<Dataset, Dataset> split(const Dataset& ds, double fraction, std::uint64_t seed);

// "NFDS" cache: magic, then version, N, C, H, W, class count as LE u32,
// N*C*H*W LE f32 pixels, N u8 labels.
inline constexpr std::uint32_t kDatasetVersion = 1;
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& source = "dataset");
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace nfa::data

#endif  // NFA_DATA_HPP
