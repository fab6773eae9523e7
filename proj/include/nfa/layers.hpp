#ifndef NFA_LAYERS_HPP
#define NFA_LAYERS_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nfa/error.hpp"
#include "nfa/kernels.hpp"
#include "nfa/prng.hpp"
#include "nfa/tensor.hpp"

namespace nfa {

enum class Activation { identity, leaky_relu, tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

inline constexpr double kDefaultLeakySlope = 0.1;

template <class T>
struct DenseCache {
  Matrix<T> input;       // [batch x in]
  Matrix<T> preact;      // [batch x out]
};

template <class T>
struct DenseGrad {
  Matrix<T> weights;  // [out x in]
  BasicTensor<T> bias;

  DenseGrad() = default;
  DenseGrad(std::size_t out, std::size_t in) : weights({out, in}), bias({out}) {}

  void zero() {
    weights.fill(T{0});
    bias.fill(T{0});
  }
  void collect(std::vector<std::span<T>>& views) {
    views.push_back(weights.span());
    views.push_back(bias.span());
  }
};

/// y = act(W x + b) applied row-wise to a batch; W is [out x in].
template <class T>
class DenseLayer {
 public:
  DenseLayer() = default;

  DenseLayer(std::size_t in, std::size_t out, Activation act, T slope = static_cast<T>(kDefaultLeakySlope))
      : weights_({out, in}), bias_({out}), act_(act), slope_(slope) {}

  std::size_t in_width() const { return weights_.cols(); }
  std::size_t out_width() const { return weights_.rows(); }
  Activation activation() const noexcept { return act_; }
  T slope() const noexcept { return slope_; }

  Matrix<T>& weights() noexcept { return weights_; }
  const Matrix<T>& weights() const noexcept { return weights_; }
  BasicTensor<T>& bias() noexcept { return bias_; }
  const BasicTensor<T>& bias() const noexcept { return bias_; }

  // Weights ~ N(0, gain^2 / in), bias zero.
  void init_normal(Prng& prng, double gain = 1.0) {
    const double sd = gain / std::sqrt(static_cast<double>(in_width()));
    for (auto& w : weights_.values()) w = static_cast<T>(sd * prng.normal());
    bias_.fill(T{0});
  }

  void zero() {
    weights_.fill(T{0});
    bias_.fill(T{0});
  }

  Matrix<T> forward(const Matrix<T>& x, DenseCache<T>* cache = nullptr) const {
    check_input(x);
    Matrix<T> pre = kernels::matmul_nt(x, weights_);
    const std::size_t out = out_width();
    for (std::size_t r = 0; r < pre.rows(); ++r)
      for (std::size_t j = 0; j < out; ++j) pre(r, j) += bias_[j];
    Matrix<T> y = pre;
    for (auto& v : y.values()) v = activate(v);
    if (cache != nullptr) {
      cache->input = x;
      cache->preact = std::move(pre);
    }
    return y;
  }

  /// Reverse-mode pass. Returns dL/dx; accumulates parameter gradients into
  /// `grad` when non-null.
  Matrix<T> backward(const DenseCache<T>& cache, const Matrix<T>& grad_out, DenseGrad<T>* grad = nullptr) const {
    require(cache.preact.rank() == 2 && cache.preact.cols() == out_width() &&
                cache.input.rank() == 2 && cache.input.cols() == in_width(),
            "dense backward: cache does not belong to this layer");
    require(grad_out.shape() == cache.preact.shape(),
            "dense backward: gradient shape " + shape_str(grad_out.shape()) + " does not match output " +
                shape_str(cache.preact.shape()));
    Matrix<T> dpre = grad_out;
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] *= derivative(cache.preact[i]);
    if (grad != nullptr) {
      require(grad->weights.shape() == weights_.shape(), "dense backward: gradient buffer shape mismatch");
      const Matrix<T> dw = kernels::matmul_tn(dpre, cache.input);
      for (std::size_t i = 0; i < dw.size(); ++i) grad->weights[i] += dw[i];
      for (std::size_t r = 0; r < dpre.rows(); ++r)
        for (std::size_t j = 0; j < dpre.cols(); ++j) grad->bias[j] += dpre(r, j);
    }
    return kernels::matmul(dpre, weights_);
  }

  void collect(std::vector<std::span<T>>& views) {
    views.push_back(weights_.span());
    views.push_back(bias_.span());
  }
  void collect(std::vector<std::span<const T>>& views) const {
    views.push_back(weights_.span());
    views.push_back(bias_.span());
  }

  template <class U>
  DenseLayer<U> cast() const {
    DenseLayer<U> out(in_width(), out_width(), act_, static_cast<U>(slope_));
    out.weights() = weights_.template cast<U>();
    out.bias() = bias_.template cast<U>();
    return out;
  }

 private:
  void check_input(const Matrix<T>& x) const {
    require(x.rank() == 2 && x.cols() == in_width(),
            "dense forward: input " + shape_str(x.shape()) + " does not match layer width " +
                std::to_string(in_width()));
  }

  T activate(T v) const {
    switch (act_) {
      case Activation::leaky_relu: return v >= T{0} ? v : slope_ * v;
      case Activation::tanh: return std::tanh(v);
      case Activation::identity: break;
    }
    return v;
  }

  T derivative(T pre) const {
    switch (act_) {
      case Activation::leaky_relu: return pre >= T{0} ? T{1} : slope_;
      case Activation::tanh: {
        const T t = std::tanh(pre);
        return T{1} - t * t;
      }
      case Activation::identity: break;
    }
    return T{1};
  }

  Matrix<T> weights_;
  BasicTensor<T> bias_;
  Activation act_ = Activation::identity;
  T slope_ = static_cast<T>(kDefaultLeakySlope);
};

/// dense_forward on a single vector.
template <class T>
std::vector<T> dense_forward(const DenseLayer<T>& layer, std::span<const T> x, DenseCache<T>* cache = nullptr) {
  const Matrix<T> y = layer.forward(rows_of(x, 1, x.size()), cache);
  return y.values();
}

template <class T>
struct MlpCache {
  std::vector<DenseCache<T>> layers;
};

template <class T>
struct MlpGrad {
  std::vector<DenseGrad<T>> layers;

  void zero() {
    for (auto& g : layers) g.zero();
  }
  void collect(std::vector<std::span<T>>& views) {
    for (auto& g : layers) g.collect(views);
  }
};

/// Stack of dense layers.
template <class T>
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer<T>> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 1; i < layers_.size(); ++i)
      require(layers_[i].in_width() == layers_[i - 1].out_width(), "mlp: consecutive layer widths disagree");
  }

  /// in -> hidden (act) x depth -> out (identity).
  static Mlp make(std::size_t in, std::size_t hidden, std::size_t depth, std::size_t out, Activation act,
                  T slope = static_cast<T>(kDefaultLeakySlope)) {
    std::vector<DenseLayer<T>> layers;
    std::size_t width = in;
    for (std::size_t i = 0; i < depth; ++i) {
      layers.emplace_back(width, hidden, act, slope);
      width = hidden;
    }
    layers.emplace_back(width, out, Activation::identity, slope);
    return Mlp(std::move(layers));
  }

  std::size_t in_width() const { return layers_.front().in_width(); }
  std::size_t out_width() const { return layers_.back().out_width(); }
  std::vector<DenseLayer<T>>& layers() noexcept { return layers_; }
  const std::vector<DenseLayer<T>>& layers() const noexcept { return layers_; }

  // Hidden layers get N(0, 2/in); the output layer is zeroed when requested.
  void init(Prng& prng, bool zero_last) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (i + 1 == layers_.size() && zero_last)
        layers_[i].zero();
      else
        layers_[i].init_normal(prng, std::sqrt(2.0));
    }
  }

  Matrix<T> forward(const Matrix<T>& x, MlpCache<T>* cache = nullptr) const {
    if (cache != nullptr) cache->layers.resize(layers_.size());
    Matrix<T> h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      h = layers_[i].forward(h, cache != nullptr ? &cache->layers[i] : nullptr);
    return h;
  }

  Matrix<T> backward(const MlpCache<T>& cache, const Matrix<T>& grad_out, MlpGrad<T>* grad = nullptr) const {
    require(cache.layers.size() == layers_.size(), "mlp backward: cache does not belong to this network");
    Matrix<T> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;)
      g = layers_[i].backward(cache.layers[i], g, grad != nullptr ? &grad->layers[i] : nullptr);
    return g;
  }

  MlpGrad<T> make_grad() const {
    MlpGrad<T> g;
    for (const auto& l : layers_) g.layers.emplace_back(l.out_width(), l.in_width());
    return g;
  }

  void collect(std::vector<std::span<T>>& views) {
    for (auto& l : layers_) l.collect(views);
  }
  void collect(std::vector<std::span<const T>>& views) const {
    for (const auto& l : layers_) l.collect(views);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weights().size() + l.bias().size();
    return n;
  }

  template <class U>
  Mlp<U> cast() const {
    std::vector<DenseLayer<U>> out;
    for (const auto& l : layers_) out.push_back(l.template cast<U>());
    return Mlp<U>(std::move(out));
  }

 private:
  std::vector<DenseLayer<T>> layers_;
};

}  // namespace nfa

#endif  // NFA_LAYERS_HPP
