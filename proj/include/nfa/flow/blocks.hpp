#ifndef NFA_FLOW_BLOCKS_HPP
#define NFA_FLOW_BLOCKS_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nfa/error.hpp"
#include "nfa/layers.hpp"
#include "nfa/tensor.hpp"

// Invertible blocks. Every block works in place on a [batch x d] matrix and
// touches only its own column range. Direction convention throughout:
//   forward  = generative direction, base z -> image x
//   inverse  = encoding direction,   image x -> base z
// Each direction adds the log|det| of the map it actually computes to the
// per-row `logdet` accumulator, so inverse contributions are the negation of
// the forward ones.

namespace nfa::flow {

inline constexpr double kDefaultClampAlpha = 1.5;
inline constexpr double kDefaultDequantMargin = 0.05;

/// Soft clamp alpha * (2/pi) * atan(s / alpha): odd, monotone, |result| < alpha.
template <class T>
T clamp_scale(T s, T alpha) {
  return alpha * static_cast<T>(2.0 / std::numbers::pi) * std::atan(s / alpha);
}

template <class T>
T clamp_scale_derivative(T s, T alpha) {
  const T r = s / alpha;
  return static_cast<T>(2.0 / std::numbers::pi) / (T{1} + r * r);
}

template <class T>
BasicTensor<T> clamp_scale(const BasicTensor<T>& s, T alpha) {
  require(alpha > T{0}, "clamp_scale: alpha must be positive");
  BasicTensor<T> out = s;
  for (auto& v : out.values()) v = clamp_scale(v, alpha);
  return out;
}

namespace detail {

template <class T>
Matrix<T> take_cols(const Matrix<T>& m, std::size_t lo, std::size_t n) {
  Matrix<T> out({m.rows(), n});
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out(r, j) = m(r, lo + j);
  return out;
}

template <class T>
void put_cols(Matrix<T>& m, std::size_t lo, const Matrix<T>& part) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < part.cols(); ++j) m(r, lo + j) = part(r, j);
}

// y[offset + i] = x[offset + idx[i]]
template <class T>
void gather(Matrix<T>& m, std::size_t offset, const std::vector<std::size_t>& idx) {
  std::vector<T> tmp(idx.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t i = 0; i < idx.size(); ++i) tmp[i] = m(r, offset + idx[i]);
    for (std::size_t i = 0; i < idx.size(); ++i) m(r, offset + i) = tmp[i];
  }
}

// y[offset + idx[i]] = x[offset + i]
template <class T>
void scatter(Matrix<T>& m, std::size_t offset, const std::vector<std::size_t>& idx) {
  std::vector<T> tmp(idx.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t i = 0; i < idx.size(); ++i) tmp[idx[i]] = m(r, offset + i);
    for (std::size_t i = 0; i < idx.size(); ++i) m(r, offset + i) = tmp[i];
  }
}

inline void check_permutation(const std::vector<std::size_t>& idx) {
  std::vector<bool> seen(idx.size(), false);
  for (std::size_t v : idx) {
    require(v < idx.size() && !seen[v], "permutation is not a bijection");
    seen[v] = true;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Logit preprocessing: p = delta + (1 - 2 delta) x, y = ln(p / (1 - p)).
// The encoding direction takes [0,1] pixels to R; decoding clips back to [0,1].

template <class T>
struct LogitCache {
  Matrix<T> p;
};

template <class T>
class LogitTransform {
 public:
  explicit LogitTransform(std::size_t width = 0, T delta = static_cast<T>(kDefaultDequantMargin))
      : width_(width), delta_(delta) {
    require(delta > T{0} && delta < T{0.5}, "logit preprocessing: margin must lie strictly inside (0, 0.5)");
  }

  std::size_t offset() const noexcept { return 0; }
  std::size_t width() const noexcept { return width_; }
  T delta() const noexcept { return delta_; }

  // Encoding: pixels -> logits.
  void inverse(Matrix<T>& x, std::vector<T>* logdet, LogitCache<T>* cache = nullptr) const {
    const T scale = T{1} - T{2} * delta_;
    const T log_scale = std::log(scale);
    if (cache != nullptr) cache->p = Matrix<T>({x.rows(), width_});
    for (std::size_t r = 0; r < x.rows(); ++r) {
      T acc{0};
      for (std::size_t j = 0; j < width_; ++j) {
        const T v = x(r, j);
        if (!(v >= T{0} && v <= T{1}))
          throw ContractViolation("logit preprocessing: pixel outside [0,1] at row " + std::to_string(r) +
                                  ", column " + std::to_string(j));
        const T p = delta_ + scale * v;
        x(r, j) = std::log(p) - std::log1p(-p);
        acc += log_scale - std::log(p) - std::log1p(-p);
        if (cache != nullptr) cache->p(r, j) = p;
      }
      if (logdet != nullptr) (*logdet)[r] += acc;
    }
  }

  // Decoding: logits -> pixels, clipped into [0,1].
  void forward(Matrix<T>& y, std::vector<T>* logdet) const {
    const T scale = T{1} - T{2} * delta_;
    const T log_scale = std::log(scale);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      T acc{0};
      for (std::size_t j = 0; j < width_; ++j) {
        const T v = y(r, j);
        const T p = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
        y(r, j) = std::clamp((p - delta_) / scale, T{0}, T{1});
        // log p + log(1 - p), stable for large |v|
        acc += -std::abs(v) - T{2} * std::log1p(std::exp(-std::abs(v))) - log_scale;
      }
      if (logdet != nullptr) (*logdet)[r] += acc;
    }
  }

  // grad: in dL/dy, out dL/dx. dlogdet[r] = dL/d(logdet_r).
  void inverse_backward(const LogitCache<T>& cache, Matrix<T>& grad, const std::vector<T>& dlogdet) const {
    const T scale = T{1} - T{2} * delta_;
    for (std::size_t r = 0; r < grad.rows(); ++r)
      for (std::size_t j = 0; j < width_; ++j) {
        const T p = cache.p(r, j);
        const T dy_dx = scale / (p * (T{1} - p));
        const T dld_dx = scale * (T{1} / (T{1} - p) - T{1} / p);
        grad(r, j) = grad(r, j) * dy_dx + dlogdet[r] * dld_dx;
      }
  }

  template <class U>
  LogitTransform<U> cast() const {
    return LogitTransform<U>(width_, static_cast<U>(delta_));
  }

 private:
  std::size_t width_;
  T delta_;
};

// ---------------------------------------------------------------------------
// Stacked affine coupling pair:
//   x1 = z1 * exp(c(s1(z2))) + t1(z2)
//   x2 = z2 * exp(c(s2(x1))) + t2(x1)
// with c the soft clamp. z1 is the first half of the block's columns.

template <class T>
struct CouplingCache {
  MlpCache<T> s1, t1, s2, t2;
  Matrix<T> raw1, raw2;  // unclamped scale outputs
  Matrix<T> z1, z2;      // encoded halves
  Matrix<T> inv1, inv2;  // exp(-clamped scale)
};

template <class T>
struct CouplingGrad {
  MlpGrad<T> s1, t1, s2, t2;

  void zero() {
    s1.zero();
    t1.zero();
    s2.zero();
    t2.zero();
  }
  void collect(std::vector<std::span<T>>& views) {
    s1.collect(views);
    t1.collect(views);
    s2.collect(views);
    t2.collect(views);
  }
};

template <class T>
class CouplingPair {
 public:
  CouplingPair() = default;

  CouplingPair(std::size_t offset, std::size_t width, Mlp<T> s1, Mlp<T> t1, Mlp<T> s2, Mlp<T> t2,
               T alpha = static_cast<T>(kDefaultClampAlpha))
      : offset_(offset),
        width_(width),
        alpha_(alpha),
        s1_(std::move(s1)),
        t1_(std::move(t1)),
        s2_(std::move(s2)),
        t2_(std::move(t2)) {
    require(width >= 2 && width % 2 == 0, "coupling: width must be even and at least 2");
    require(alpha > T{0}, "coupling: clamp alpha must be positive");
    const std::size_t h = width / 2;
    require(s1_.in_width() == h && s1_.out_width() == h && t1_.in_width() == h && t1_.out_width() == h &&
                s2_.in_width() == h && s2_.out_width() == h && t2_.in_width() == h && t2_.out_width() == h,
            "coupling: subnetwork widths must match the half width " + std::to_string(h));
  }

  /// Two-hidden-layer (by default) MLP subnets; final layers zeroed so the
  /// pair starts as the identity map.
  static CouplingPair make(std::size_t offset, std::size_t width, std::size_t hidden, std::size_t depth, Prng& prng,
                           T alpha = static_cast<T>(kDefaultClampAlpha), T slope = static_cast<T>(kDefaultLeakySlope)) {
    require(width >= 2 && width % 2 == 0, "coupling: width must be even and at least 2");
    const std::size_t h = width / 2;
    auto net = [&] {
      auto m = Mlp<T>::make(h, hidden, depth, h, Activation::leaky_relu, slope);
      m.init(prng, true);
      return m;
    };
    auto s1 = net();
    auto t1 = net();
    auto s2 = net();
    auto t2 = net();
    return CouplingPair(offset, width, std::move(s1), std::move(t1), std::move(s2), std::move(t2), alpha);
  }

  std::size_t offset() const noexcept { return offset_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t half() const noexcept { return width_ / 2; }
  T alpha() const noexcept { return alpha_; }
  const Mlp<T>& s1() const noexcept { return s1_; }
  const Mlp<T>& t1() const noexcept { return t1_; }
  const Mlp<T>& s2() const noexcept { return s2_; }
  const Mlp<T>& t2() const noexcept { return t2_; }
  Mlp<T>& s1() noexcept { return s1_; }
  Mlp<T>& t1() noexcept { return t1_; }
  Mlp<T>& s2() noexcept { return s2_; }
  Mlp<T>& t2() noexcept { return t2_; }

  void forward(Matrix<T>& m, std::vector<T>* logdet) const {
    const std::size_t h = half();
    const Matrix<T> z1 = detail::take_cols(m, offset_, h);
    const Matrix<T> z2 = detail::take_cols(m, offset_ + h, h);
    const Matrix<T> a1 = s1_.forward(z2);
    const Matrix<T> b1 = t1_.forward(z2);
    Matrix<T> x1 = z1;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      T acc{0};
      for (std::size_t j = 0; j < h; ++j) {
        const T s = clamp_scale(a1(r, j), alpha_);
        x1(r, j) = z1(r, j) * std::exp(s) + b1(r, j);
        acc += s;
      }
      if (logdet != nullptr) (*logdet)[r] += acc;
    }
    const Matrix<T> a2 = s2_.forward(x1);
    const Matrix<T> b2 = t2_.forward(x1);
    Matrix<T> x2 = z2;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      T acc{0};
      for (std::size_t j = 0; j < h; ++j) {
        const T s = clamp_scale(a2(r, j), alpha_);
        x2(r, j) = z2(r, j) * std::exp(s) + b2(r, j);
        acc += s;
      }
      if (logdet != nullptr) (*logdet)[r] += acc;
    }
    detail::put_cols(m, offset_, x1);
    detail::put_cols(m, offset_ + h, x2);
  }

  // Encoding direction: recover z2 from x1 first, then z1.
  void inverse(Matrix<T>& m, std::vector<T>* logdet, CouplingCache<T>* cache = nullptr) const {
    const std::size_t h = half();
    const Matrix<T> x1 = detail::take_cols(m, offset_, h);
    const Matrix<T> x2 = detail::take_cols(m, offset_ + h, h);
    const Matrix<T> a2 = s2_.forward(x1, cache ? &cache->s2 : nullptr);
    const Matrix<T> b2 = t2_.forward(x1, cache ? &cache->t2 : nullptr);
    Matrix<T> z2 = x2;
    Matrix<T> inv2(x2.shape());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      T acc{0};
      for (std::size_t j = 0; j < h; ++j) {
        const T s = clamp_scale(a2(r, j), alpha_);
        inv2(r, j) = std::exp(-s);
        z2(r, j) = (x2(r, j) - b2(r, j)) * inv2(r, j);
        acc -= s;
      }
      if (logdet != nullptr) (*logdet)[r] += acc;
    }
    const Matrix<T> a1 = s1_.forward(z2, cache ? &cache->s1 : nullptr);
    const Matrix<T> b1 = t1_.forward(z2, cache ? &cache->t1 : nullptr);
    Matrix<T> z1 = x1;
    Matrix<T> inv1(x1.shape());
    for (std::size_t r = 0; r < m.rows(); ++r) {
      T acc{0};
      for (std::size_t j = 0; j < h; ++j) {
        const T s = clamp_scale(a1(r, j), alpha_);
        inv1(r, j) = std::exp(-s);
        z1(r, j) = (x1(r, j) - b1(r, j)) * inv1(r, j);
        acc -= s;
      }
      if (logdet != nullptr) (*logdet)[r] += acc;
    }
    detail::put_cols(m, offset_, z1);
    detail::put_cols(m, offset_ + h, z2);
    if (cache != nullptr) {
      cache->raw1 = a1;
      cache->raw2 = a2;
      cache->z1 = std::move(z1);
      cache->z2 = std::move(z2);
      cache->inv1 = std::move(inv1);
      cache->inv2 = std::move(inv2);
    }
  }

  /// Backpropagates through the encoding direction. `grad` holds dL/dz on
  /// entry and dL/dx on return (this block's columns only); dlogdet[r] is
  /// dL/d(logdet_r).
  void inverse_backward(const CouplingCache<T>& cache, Matrix<T>& grad, const std::vector<T>& dlogdet,
                        CouplingGrad<T>* pgrad) const {
    const std::size_t h = half();
    const std::size_t rows = grad.rows();
    const Matrix<T> dz1 = detail::take_cols(grad, offset_, h);
    Matrix<T> dz2 = detail::take_cols(grad, offset_ + h, h);

    // z1 = (x1 - t1(z2)) * exp(-c(s1(z2)))
    Matrix<T> dx1({rows, h});
    Matrix<T> dt1({rows, h});
    Matrix<T> da1({rows, h});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < h; ++j) {
        const T e = cache.inv1(r, j);
        dx1(r, j) = dz1(r, j) * e;
        dt1(r, j) = -dz1(r, j) * e;
        const T ds = -dz1(r, j) * cache.z1(r, j) - dlogdet[r];
        da1(r, j) = ds * clamp_scale_derivative(cache.raw1(r, j), alpha_);
      }
    const Matrix<T> gs1 = s1_.backward(cache.s1, da1, pgrad ? &pgrad->s1 : nullptr);
    const Matrix<T> gt1 = t1_.backward(cache.t1, dt1, pgrad ? &pgrad->t1 : nullptr);
    for (std::size_t i = 0; i < dz2.size(); ++i) dz2[i] += gs1[i] + gt1[i];

    // z2 = (x2 - t2(x1)) * exp(-c(s2(x1)))
    Matrix<T> dx2({rows, h});
    Matrix<T> dt2({rows, h});
    Matrix<T> da2({rows, h});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < h; ++j) {
        const T e = cache.inv2(r, j);
        dx2(r, j) = dz2(r, j) * e;
        dt2(r, j) = -dz2(r, j) * e;
        const T ds = -dz2(r, j) * cache.z2(r, j) - dlogdet[r];
        da2(r, j) = ds * clamp_scale_derivative(cache.raw2(r, j), alpha_);
      }
    const Matrix<T> gs2 = s2_.backward(cache.s2, da2, pgrad ? &pgrad->s2 : nullptr);
    const Matrix<T> gt2 = t2_.backward(cache.t2, dt2, pgrad ? &pgrad->t2 : nullptr);
    for (std::size_t i = 0; i < dx1.size(); ++i) dx1[i] += gs2[i] + gt2[i];

    detail::put_cols(grad, offset_, dx1);
    detail::put_cols(grad, offset_ + h, dx2);
  }

  CouplingGrad<T> make_grad() const {
    return {s1_.make_grad(), t1_.make_grad(), s2_.make_grad(), t2_.make_grad()};
  }

  void collect(std::vector<std::span<T>>& views) {
    s1_.collect(views);
    t1_.collect(views);
    s2_.collect(views);
    t2_.collect(views);
  }
  void collect(std::vector<std::span<const T>>& views) const {
    s1_.collect(views);
    t1_.collect(views);
    s2_.collect(views);
    t2_.collect(views);
  }

  template <class U>
  CouplingPair<U> cast() const {
    return CouplingPair<U>(offset_, width_, s1_.template cast<U>(), t1_.template cast<U>(), s2_.template cast<U>(),
                           t2_.template cast<U>(), static_cast<U>(alpha_));
  }

 private:
  std::size_t offset_ = 0;
  std::size_t width_ = 0;
  T alpha_ = static_cast<T>(kDefaultClampAlpha);
  Mlp<T> s1_, t1_, s2_, t2_;
};

// ---------------------------------------------------------------------------
// Space-to-channel reordering C x H x W -> 4C x H/2 x W/2. Output channel
// 4c + 2dy + dx at (i, j) takes input channel c at (2i + dy, 2j + dx).

struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

std::vector<std::size_t> squeeze_index(const ImageShape& in);

class Squeeze {
 public:
  Squeeze() = default;
  explicit Squeeze(ImageShape in) : in_(in), index_(squeeze_index(in)) {}

  std::size_t offset() const noexcept { return 0; }
  std::size_t width() const noexcept { return index_.size(); }
  const ImageShape& input_shape() const noexcept { return in_; }
  ImageShape output_shape() const { return {in_.channels * 4, in_.height / 2, in_.width / 2}; }

  template <class T>
  void inverse(Matrix<T>& m) const {
    detail::gather(m, 0, index_);
  }
  template <class T>
  void forward(Matrix<T>& m) const {
    detail::scatter(m, 0, index_);
  }
  // Gradient of a permutation is the opposite permutation.
  template <class T>
  void inverse_backward(Matrix<T>& grad) const {
    detail::scatter(grad, 0, index_);
  }

 private:
  ImageShape in_;
  std::vector<std::size_t> index_;
};

/// squeeze / unsqueeze on a single C x H x W image tensor.
template <class T>
BasicTensor<T> squeeze(const BasicTensor<T>& image) {
  require(image.rank() == 3, "squeeze: expected a C x H x W tensor");
  const ImageShape in{image.dim(0), image.dim(1), image.dim(2)};
  Squeeze sq(in);
  Matrix<T> m = image.reshaped({1, image.size()});
  sq.inverse(m);
  const ImageShape out = sq.output_shape();
  return m.reshaped({out.channels, out.height, out.width});
}

template <class T>
BasicTensor<T> unsqueeze(const BasicTensor<T>& image) {
  require(image.rank() == 3 && image.dim(0) % 4 == 0, "unsqueeze: expected a 4C x H x W tensor");
  const ImageShape in{image.dim(0) / 4, image.dim(1) * 2, image.dim(2) * 2};
  Squeeze sq(in);
  Matrix<T> m = image.reshaped({1, image.size()});
  sq.forward(m);
  return m.reshaped({in.channels, in.height, in.width});
}

// ---------------------------------------------------------------------------
// Fixed coordinate permutation over a column range: encoding gathers
// y[i] = x[perm[i]], decoding scatters it back.

class Permute {
 public:
  Permute() = default;
  Permute(std::size_t offset, std::vector<std::size_t> perm) : offset_(offset), perm_(std::move(perm)) {
    detail::check_permutation(perm_);
  }

  static Permute random(std::size_t offset, std::size_t width, Prng& prng) {
    return Permute(offset, prng.permutation(width));
  }

  std::size_t offset() const noexcept { return offset_; }
  std::size_t width() const noexcept { return perm_.size(); }
  const std::vector<std::size_t>& permutation() const noexcept { return perm_; }

  template <class T>
  void inverse(Matrix<T>& m) const {
    detail::gather(m, offset_, perm_);
  }
  template <class T>
  void forward(Matrix<T>& m) const {
    detail::scatter(m, offset_, perm_);
  }
  template <class T>
  void inverse_backward(Matrix<T>& grad) const {
    detail::scatter(grad, offset_, perm_);
  }

 private:
  std::size_t offset_ = 0;
  std::vector<std::size_t> perm_;
};

// ---------------------------------------------------------------------------
// Multi-scale split: of the block's columns, the leading three quarters are
// final (sent straight to the base vector) and only the trailing quarter
// stays active for later blocks. Data is never moved, so the base vector is
// the concatenation [passthrough | active] in column order.

class Split {
 public:
  Split() = default;
  Split(std::size_t offset, std::size_t width) : offset_(offset), width_(width) {
    require(width % 4 == 0 && width > 0, "split: width " + std::to_string(width) + " is not divisible by 4");
  }

  std::size_t offset() const noexcept { return offset_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t passthrough() const noexcept { return width_ / 4 * 3; }
  std::size_t active_offset() const noexcept { return offset_ + passthrough(); }
  std::size_t active_width() const noexcept { return width_ - passthrough(); }

 private:
  std::size_t offset_ = 0;
  std::size_t width_ = 0;
};

template <class T>
struct SplitParts {
  std::vector<T> passthrough;
  std::vector<T> active;
};

/// split_merge on a flat vector: the leading three quarters pass through.
template <class T>
SplitParts<T> split_parts(std::span<const T> x) {
  require(!x.empty() && x.size() % 4 == 0, "split: width " + std::to_string(x.size()) + " is not divisible by 4");
  const std::size_t k = x.size() / 4 * 3;
  return {std::vector<T>(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(k)),
          std::vector<T>(x.begin() + static_cast<std::ptrdiff_t>(k), x.end())};
}

template <class T>
std::vector<T> merge_parts(const SplitParts<T>& parts) {
  std::vector<T> out = parts.passthrough;
  out.insert(out.end(), parts.active.begin(), parts.active.end());
  return out;
}

}  // namespace nfa::flow

#endif  // NFA_FLOW_BLOCKS_HPP
