#include "nfa/harness/images.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "nfa/error.hpp"
#include "nfa/io.hpp"

namespace nfa::harness {

std::uint8_t to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t width, std::size_t height) {
  require(width > 0 && height > 0 && pixels.size() == width * height, "pgm: pixel count does not match width x height");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  io::Bytes out(header.begin(), header.end());
  for (float v : pixels) out.push_back(to_byte(v));
  io::write_file_atomic(path, out);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw ParseError(path.string() + ": truncated PGM header at byte offset " + std::to_string(pos));
    return t;
  };
  if (token() != "P5") throw ParseError(path.string() + ": not a binary PGM (P5)");
  GrayImage img;
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw ParseError(path.string() + ": only maxval 255 is supported");
  } catch (const std::invalid_argument&) {
    throw ParseError(path.string() + ": malformed PGM header");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t n = img.width * img.height;
  if (pos + n > bytes.size())
    throw ParseError(path.string() + ": pixel data truncated at byte offset " + std::to_string(bytes.size()));
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return img;
}

std::vector<float> magnify_perturbation(std::span<const float> clean, std::span<const float> adv, double gain) {
  require(clean.size() == adv.size(), "perturbation: image sizes differ");
  std::vector<float> out(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i)
    out[i] = static_cast<float>(std::clamp(0.5 + gain * (static_cast<double>(adv[i]) - clean[i]), 0.0, 1.0));
  return out;
}

void dump_images(std::span<const float> clean, std::span<const float> adv, std::size_t width, std::size_t height,
                 const std::filesystem::path& prefix, double gain) {
  require(clean.size() == adv.size(), "dump_images: clean and adversarial images differ in size");
  auto with = [&](const char* suffix) {
    auto p = prefix;
    p += suffix;
    return p;
  };
  write_pgm(with("_clean.pgm"), clean, width, height);
  write_pgm(with("_adv.pgm"), adv, width, height);
  write_pgm(with("_perturbation.pgm"), magnify_perturbation(clean, adv, gain), width, height);
}

}  // namespace nfa::harness
