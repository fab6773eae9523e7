#ifndef NFA_ADAM_HPP
#define NFA_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nfa/error.hpp"

namespace nfa {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment accumulators for one parameter list, laid out like the parameters.
struct AdamState {
  AdamConfig cfg;
  std::int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  explicit AdamState(AdamConfig c) : cfg(c) {}
};

/// Bias-corrected Adam update. Every gradient is checked for finiteness before
/// anything is modified, so a rejected step leaves params and state untouched.
template <class T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<T>>& grads, AdamState& state) {
  require(params.size() == grads.size(), "adam: parameter and gradient lists differ in length");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  require(state.m.size() == params.size(), "adam: state does not match parameter list");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].size() == grads[k].size() && state.m[k].size() == params[k].size(),
            "adam: shape mismatch in parameter " + std::to_string(k));
    for (T g : grads[k])
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("adam: non-finite gradient in parameter " + std::to_string(k));
  }

  state.t += 1;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double g = static_cast<double>(grads[k][i]);
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[k][i] = static_cast<T>(static_cast<double>(params[k][i]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

}  // namespace nfa

#endif  // NFA_ADAM_HPP
