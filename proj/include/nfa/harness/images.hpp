#ifndef NFA_HARNESS_IMAGES_HPP
#define NFA_HARNESS_IMAGES_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace nfa::harness {

inline constexpr double kPerturbationGain = 5.0;

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// [0,1] float -> 8-bit, clipped, rounded to nearest.
std::uint8_t to_byte(double v);

/// Binary PGM (P5, maxval 255).
void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, std::size_t width, std::size_t height);
GrayImage read_pgm(const std::filesystem::path& path);

/// 0.5 + gain * (adv - clean), clipped to [0,1].
std::vector<float> magnify_perturbation(std::span<const float> clean, std::span<const float> adv,
                                        double gain = kPerturbationGain);

/// Writes <prefix>_clean.pgm, <prefix>_adv.pgm and <prefix>_perturbation.pgm.
void dump_images(std::span<const float> clean, std::span<const float> adv, std::size_t width, std::size_t height,
                 const std::filesystem::path& prefix, double gain = kPerturbationGain);

}  // namespace nfa::harness

#endif  // NFA_HARNESS_IMAGES_HPP
