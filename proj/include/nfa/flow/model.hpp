#ifndef NFA_FLOW_MODEL_HPP
#define NFA_FLOW_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "nfa/error.hpp"
#include "nfa/flow/blocks.hpp"
#include "nfa/prng.hpp"
#include "nfa/tensor.hpp"

namespace nfa::flow {

template <class T>
using Block = std::variant<LogitTransform<T>, CouplingPair<T>, Squeeze, Permute, Split>;

template <class T>
using BlockCache = std::variant<std::monostate, LogitCache<T>, CouplingCache<T>>;

template <class T>
struct FlowCache {
  std::vector<BlockCache<T>> blocks;
};

// One CouplingGrad per block; non-coupling blocks keep an empty entry.
template <class T>
struct FlowGrad {
  std::vector<CouplingGrad<T>> blocks;

  void zero() {
    for (auto& b : blocks) b.zero();
  }
  std::vector<std::span<T>> views() {
    std::vector<std::span<T>> out;
    for (auto& b : blocks) b.collect(out);
    return out;
  }
};

template <class T>
struct Encoded {
  Matrix<T> z;
  std::vector<T> logdet;  // log |det d f^-1 / dx| per row
};

/// Layout of the default multi-scale model; see build_flow.
struct FlowArchitecture {
  ImageShape image{1, 8, 8};
  std::size_t hidden = 64;
  std::size_t depth = 2;
  std::size_t high_res_blocks = 4;
  std::size_t low_res_blocks = 6;
  std::size_t fc_blocks = 6;
  double alpha = kDefaultClampAlpha;
  double delta = kDefaultDequantMargin;
  double slope = kDefaultLeakySlope;
  bool preprocess = true;
  std::uint64_t seed = 0;
};

template <class T>
class FlowModel {
 public:
  FlowModel() = default;

  FlowModel(ImageShape image, std::vector<Block<T>> blocks) : image_(image), blocks_(std::move(blocks)) {
    validate();
  }

  std::size_t dim() const noexcept { return image_.size(); }
  const ImageShape& image() const noexcept { return image_; }
  const std::vector<Block<T>>& blocks() const noexcept { return blocks_; }
  std::vector<Block<T>>& blocks() noexcept { return blocks_; }
  bool has_preprocess() const {
    return !blocks_.empty() && std::holds_alternative<LogitTransform<T>>(blocks_.front());
  }

  /// Generative map z -> x (blocks applied last to first). With a logit
  /// block present the result is a [0,1] image.
  Matrix<T> forward(Matrix<T> z, std::vector<T>* logdet = nullptr) const {
    check_batch(z);
    if (logdet != nullptr) logdet->assign(z.rows(), T{0});
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      std::visit(
          [&](const auto& b) {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Split>) {
            } else if constexpr (std::is_same_v<B, Squeeze> || std::is_same_v<B, Permute>) {
              b.forward(z);
            } else {
              b.forward(z, logdet);
            }
          },
          blocks_[i]);
      check_finite(z, i);
    }
    return z;
  }

  /// Encoding map x -> z together with the per-row inverse log-determinant.
  Encoded<T> inverse(Matrix<T> x, FlowCache<T>* cache = nullptr) const {
    check_batch(x);
    std::vector<T> logdet(x.rows(), T{0});
    if (cache != nullptr) cache->blocks.assign(blocks_.size(), std::monostate{});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      std::visit(
          [&](const auto& b) {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Split>) {
            } else if constexpr (std::is_same_v<B, Squeeze> || std::is_same_v<B, Permute>) {
              b.inverse(x);
            } else if constexpr (std::is_same_v<B, LogitTransform<T>>) {
              if (cache != nullptr) {
                LogitCache<T> c;
                b.inverse(x, &logdet, &c);
                cache->blocks[i] = std::move(c);
              } else {
                b.inverse(x, &logdet);
              }
            } else {
              if (cache != nullptr) {
                CouplingCache<T> c;
                b.inverse(x, &logdet, &c);
                cache->blocks[i] = std::move(c);
              } else {
                b.inverse(x, &logdet);
              }
            }
          },
          blocks_[i]);
      check_finite(x, i);
    }
    return {std::move(x), std::move(logdet)};
  }

  /// Backpropagates dL/dz and dL/dlogdet through a cached inverse pass.
  /// Parameter gradients accumulate into `grad`; returns dL/dx.
  Matrix<T> inverse_backward(const FlowCache<T>& cache, Matrix<T> grad_z, const std::vector<T>& grad_logdet,
                             FlowGrad<T>* grad) const {
    require(cache.blocks.size() == blocks_.size(), "flow backward: cache does not belong to this model");
    require(grad_logdet.size() == grad_z.rows(), "flow backward: one logdet gradient per row expected");
    if (grad != nullptr) require(grad->blocks.size() == blocks_.size(), "flow backward: gradient buffer mismatch");
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      std::visit(
          [&](const auto& b) {
            using B = std::decay_t<decltype(b)>;
            if constexpr (std::is_same_v<B, Split>) {
            } else if constexpr (std::is_same_v<B, Squeeze> || std::is_same_v<B, Permute>) {
              b.inverse_backward(grad_z);
            } else if constexpr (std::is_same_v<B, LogitTransform<T>>) {
              b.inverse_backward(std::get<LogitCache<T>>(cache.blocks[i]), grad_z, grad_logdet);
            } else {
              b.inverse_backward(std::get<CouplingCache<T>>(cache.blocks[i]), grad_z, grad_logdet,
                                 grad != nullptr ? &grad->blocks[i] : nullptr);
            }
          },
          blocks_[i]);
    }
    return grad_z;
  }

  FlowGrad<T> make_grad() const {
    FlowGrad<T> g;
    for (const auto& b : blocks_) {
      if (const auto* c = std::get_if<CouplingPair<T>>(&b))
        g.blocks.push_back(c->make_grad());
      else
        g.blocks.emplace_back();
    }
    return g;
  }

  std::vector<std::span<T>> parameters() {
    std::vector<std::span<T>> out;
    for (auto& b : blocks_)
      if (auto* c = std::get_if<CouplingPair<T>>(&b)) c->collect(out);
    return out;
  }
  std::vector<std::span<const T>> parameters() const {
    std::vector<std::span<const T>> out;
    for (const auto& b : blocks_)
      if (const auto* c = std::get_if<CouplingPair<T>>(&b)) c->collect(out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : parameters()) n += v.size();
    return n;
  }

  /// Redraws every subnet parameter (output layers included) as N(0, scale^2 / fan_in).
  void randomize(Prng& prng, double scale) {
    for (auto& b : blocks_)
      if (auto* c = std::get_if<CouplingPair<T>>(&b))
        for (auto* net : {&c->s1(), &c->t1(), &c->s2(), &c->t2()})
          for (auto& layer : net->layers()) {
            layer.init_normal(prng, scale);
            for (auto& v : layer.bias().values()) v = static_cast<T>(0.1 * scale * prng.normal());
          }
  }

  template <class U>
  FlowModel<U> cast() const {
    std::vector<Block<U>> out;
    for (const auto& b : blocks_) {
      std::visit(
          [&](const auto& blk) {
            using B = std::decay_t<decltype(blk)>;
            if constexpr (std::is_same_v<B, LogitTransform<T>> || std::is_same_v<B, CouplingPair<T>>)
              out.emplace_back(blk.template cast<U>());
            else
              out.emplace_back(blk);
          },
          b);
    }
    return FlowModel<U>(image_, std::move(out));
  }

 private:
  void validate() const {
    const std::size_t d = dim();
    require(d > 0, "flow: empty input shape");
    std::size_t active_lo = 0;
    ImageShape current = image_;
    bool squeezable = true;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      std::visit(
          [&](const auto& b) {
            using B = std::decay_t<decltype(b)>;
            const std::string where = "flow block " + std::to_string(i) + ": ";
            require(b.offset() + b.width() <= d, where + "column range exceeds the model dimension");
            if constexpr (std::is_same_v<B, LogitTransform<T>>) {
              require(i == 0 && b.width() == d, where + "logit preprocessing must be first and span all columns");
            } else if constexpr (std::is_same_v<B, Squeeze>) {
              require(squeezable && active_lo == 0, where + "squeeze must act on the whole image before any split");
              require(b.input_shape() == current, where + "squeeze input shape does not match the running shape");
              current = b.output_shape();
            } else if constexpr (std::is_same_v<B, Split>) {
              require(b.offset() == active_lo && b.offset() + b.width() == d,
                      where + "split must cover the current active range");
              active_lo = b.active_offset();
              squeezable = false;
            } else {
              require(b.offset() >= active_lo, where + "block touches columns already split off");
            }
          },
          blocks_[i]);
    }
  }

  void check_batch(const Matrix<T>& m) const {
    require(m.rank() == 2 && m.cols() == dim(),
            "flow: batch " + shape_str(m.shape()) + " does not have " + std::to_string(dim()) + " columns");
  }

  static void check_finite(const Matrix<T>& m, std::size_t block) {
    for (std::size_t i = 0; i < m.size(); ++i)
      if (!std::isfinite(m[i])) throw FlowNumericError(block, "non-finite value in output");
  }

  ImageShape image_;
  std::vector<Block<T>> blocks_;
};

/// Default multi-scale layout (encoding order):
///   [logit] -> high-res coupling pairs -> squeeze -> low-res coupling pairs
///   -> permute -> split 3/4 -> fully connected coupling pairs on the last quarter.
/// Consecutive coupling pairs inside a level are separated by a fixed random
/// permutation drawn from `arch.seed`.
template <class T>
FlowModel<T> build_flow(const FlowArchitecture& arch) {
  const std::size_t d = arch.image.size();
  require(d > 0, "flow: empty image shape");
  Prng prng(arch.seed);
  const T alpha = static_cast<T>(arch.alpha);
  const T slope = static_cast<T>(arch.slope);
  std::vector<Block<T>> blocks;
  if (arch.preprocess) blocks.emplace_back(LogitTransform<T>(d, static_cast<T>(arch.delta)));

  auto level = [&](std::size_t count, std::size_t offset, std::size_t width) {
    for (std::size_t i = 0; i < count; ++i) {
      blocks.emplace_back(CouplingPair<T>::make(offset, width, arch.hidden, arch.depth, prng, alpha, slope));
      if (i + 1 < count) blocks.emplace_back(Permute::random(offset, width, prng));
    }
  };

  level(arch.high_res_blocks, 0, d);
  if (arch.low_res_blocks > 0) {
    blocks.emplace_back(Squeeze(arch.image));
    level(arch.low_res_blocks, 0, d);
  }
  if (arch.fc_blocks > 0) {
    blocks.emplace_back(Permute::random(0, d, prng));
    const Split split(0, d);
    blocks.emplace_back(split);
    level(arch.fc_blocks, split.active_offset(), split.active_width());
  }
  return FlowModel<T>(arch.image, std::move(blocks));
}

inline const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

/// Per-row negative log-likelihood in nats under a standard-normal base:
/// sum(z^2)/2 + d/2 ln(2 pi) - logdet_inverse(x).
template <class T>
std::vector<double> nll(const FlowModel<T>& model, const Matrix<T>& x) {
  const Encoded<T> enc = model.inverse(x);
  std::vector<double> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < enc.z.cols(); ++j) sq += static_cast<double>(enc.z(r, j)) * enc.z(r, j);
    out[r] = 0.5 * sq + kHalfLog2Pi * static_cast<double>(model.dim()) - static_cast<double>(enc.logdet[r]);
  }
  return out;
}

template <class T>
double nll(const FlowModel<T>& model, std::span<const T> x) {
  return nll(model, rows_of(x, 1, x.size())).front();
}

/// Mean NLL over the batch; adds its parameter gradient into `grad`.
template <class T>
double nll_with_grad(const FlowModel<T>& model, const Matrix<T>& x, FlowGrad<T>& grad) {
  FlowCache<T> cache;
  const Encoded<T> enc = model.inverse(x, &cache);
  const std::size_t rows = x.rows();
  const T inv_b = T{1} / static_cast<T>(rows);
  double total = 0.0;
  Matrix<T> dz = enc.z;
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < dz.cols(); ++j) {
      sq += static_cast<double>(enc.z(r, j)) * enc.z(r, j);
      dz(r, j) *= inv_b;
    }
    total += 0.5 * sq + kHalfLog2Pi * static_cast<double>(model.dim()) - static_cast<double>(enc.logdet[r]);
  }
  const std::vector<T> dlogdet(rows, -inv_b);
  model.inverse_backward(cache, std::move(dz), dlogdet, &grad);
  return total / static_cast<double>(rows);
}

}  // namespace nfa::flow

#endif  // NFA_FLOW_MODEL_HPP
