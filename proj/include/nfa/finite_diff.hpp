#ifndef NFA_FINITE_DIFF_HPP
#define NFA_FINITE_DIFF_HPP

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "nfa/error.hpp"

// Central-difference oracles. They only evaluate the function they are given,
// so they stay independent of any analytic gradient they are compared with.

namespace nfa {

inline constexpr double kDefaultFiniteDiffStep = 1e-3;

/// Gradient of a scalar function; `params` is perturbed in place and restored.
template <class T>
std::vector<double> finite_diff_grad(const std::function<double()>& loss, std::span<T> params,
                                     double h = kDefaultFiniteDiffStep) {
  require(h > 0.0, "finite_diff_grad: step must be positive");
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T saved = params[i];
    params[i] = static_cast<T>(saved + h);
    const double up = loss();
    params[i] = static_cast<T>(saved - h);
    const double down = loss();
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Jacobian J[i][j] = d map_i / d x_j as a row-major [m x n] matrix.
std::vector<double> finite_diff_jacobian(const std::function<std::vector<double>(std::span<const double>)>& map,
                                         std::span<const double> x, double h = kDefaultFiniteDiffStep);

struct SignedLogDet {
  int sign = 0;           // -1, 0 or +1
  double log_abs = 0.0;   // log |det|; -inf when singular
};

/// Sign and log-magnitude of det(A) for a row-major square matrix.
SignedLogDet slogdet(std::span<const double> a, std::size_t n);

/// ||a - b|| / max(||a||, ||b||), with 0 when both vanish.
double relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace nfa

#endif  // NFA_FINITE_DIFF_HPP
