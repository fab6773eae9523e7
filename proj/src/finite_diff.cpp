#include "nfa/finite_diff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <limits>

namespace nfa {

std::vector<double> finite_diff_jacobian(const std::function<std::vector<double>(std::span<const double>)>& map,
                                         std::span<const double> x, double h) {
  require(h > 0.0, "finite_diff_jacobian: step must be positive");
  const std::size_t n = x.size();
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> jac;
  std::size_t m = 0;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = x[j] + h;
    const auto up = map(probe);
    probe[j] = x[j] - h;
    const auto down = map(probe);
    probe[j] = x[j];
    if (j == 0) {
      m = up.size();
      jac.assign(m * n, 0.0);
    }
    require(up.size() == m && down.size() == m, "finite_diff_jacobian: map output length changed");
    for (std::size_t i = 0; i < m; ++i) jac[i * n + j] = (up[i] - down[i]) / (2.0 * h);
  }
  return jac;
}

SignedLogDet slogdet(std::span<const double> a, std::size_t n) {
  require(a.size() == n * n, "slogdet: matrix is not square");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(a.data(),
                                                                                              static_cast<Eigen::Index>(n),
                                                                                              static_cast<Eigen::Index>(n));
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(mat);
  SignedLogDet out{static_cast<int>(lu.permutationP().determinant()), 0.0};
  const auto& packed = lu.matrixLU();
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    const double d = packed(i, i);
    if (d == 0.0) return {0, -std::numeric_limits<double>::infinity()};
    if (d < 0.0) out.sign = -out.sign;
    out.log_abs += std::log(std::abs(d));
  }
  return out;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "relative_error: length mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

}  // namespace nfa
