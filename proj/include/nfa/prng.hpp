#ifndef NFA_PRNG_HPP
#define NFA_PRNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "nfa/tensor.hpp"

namespace nfa {

/// Seedable random source with a fixed, documented algorithm:
///   - bits:     std::mt19937_64 (its output sequence is pinned by the C++ standard)
///   - uniform:  top 53 bits of one draw scaled by 2^-53, in [0, 1)
///   - normal:   Box-Muller in double precision on two uniforms; the second
///               variate of each pair is cached and returned by the next call.
/// The standard library's distributions are avoided on purpose: their output
/// differs between library implementations.
class Prng {
 public:
  explicit Prng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi] inclusive, via rejection-free multiply-shift on 64 bits.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1u;
    const auto r = static_cast<std::uint64_t>((static_cast<unsigned __int128>(engine_()) * span) >> 64);
    return lo + static_cast<std::int64_t>(r);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  template <class T = float>
  BasicTensor<T> standard_normal(const Shape& shape) {
    BasicTensor<T> out(shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(normal());
    return out;
  }

  // Uniformly random permutation of [0, n) by Fisher-Yates.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Independent child seed for stream `stream` of `seed` (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// prng_standard_normal: i.i.d. N(0,1) draws of the given shape.
template <class T = float>
BasicTensor<T> standard_normal(const Shape& shape, Prng& prng) {
  return prng.standard_normal<T>(shape);
}

}  // namespace nfa

#endif  // NFA_PRNG_HPP
