#ifndef NFA_KERNELS_HPP
#define NFA_KERNELS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nfa/error.hpp"
#include "nfa/parallel.hpp"
#include "nfa/tensor.hpp"

// Dense tensor kernels. `nfa::kernels::serial` holds straightforward reference
// loops; the functions in `nfa::kernels` are the OpenMP versions used by the
// library. Every output element is produced by exactly one thread in a fixed
// order, and reductions use fixed-size blocks, so results never depend on the
// thread count. They match the serial references bit-for-bit except where the
// summation order differs (matmul_nt keeps four partial sums, sum is blocked).

namespace nfa::kernels {

namespace detail {

template <class T>
void check_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
}

template <class T>
void check_matrix(const BasicTensor<T>& a, const char* op) {
  if (a.rank() != 2) throw ContractViolation(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

inline constexpr std::size_t kReduceBlock = 4096;

}  // namespace detail

namespace serial {

template <class T, class F>
BasicTensor<T> map(const BasicTensor<T>& a, F f) {
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class T, class F>
BasicTensor<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, F f, const char* op) {
  detail::check_same_shape(a, b, op);
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <class T>
double sum(const BasicTensor<T>& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc;
}

// C = A * B
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

// C = A * B^T
template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  detail::check_matrix(a, "matmul_nt");
  detail::check_matrix(b, "matmul_nt");
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Matrix<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  return c;
}

// C = A^T * B
template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  detail::check_matrix(a, "matmul_tn");
  detail::check_matrix(b, "matmul_tn");
  require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> c({k, n});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc{0};
      for (std::size_t p = 0; p < m; ++p) acc += a(p, i) * b(p, j);
      c(i, j) = acc;
    }
  return c;
}

}  // namespace serial

// ---- elementwise -----------------------------------------------------------

template <class T, class F>
BasicTensor<T> map(const BasicTensor<T>& a, F f) {
  BasicTensor<T> out = a;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(out.size());
  T* o = out.data();
  const T* in = a.data();
#pragma omp parallel for schedule(static) if (parallel::worth_parallel(out.size())) \
    num_threads(parallel::thread_count())
  for (std::ptrdiff_t i = 0; i < n; ++i) o[i] = f(in[i]);
  return out;
}

template <class T, class F>
BasicTensor<T> zip(const BasicTensor<T>& a, const BasicTensor<T>& b, F f, const char* op) {
  detail::check_same_shape(a, b, op);
  BasicTensor<T> out = a;
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(out.size());
  T* o = out.data();
  const T* pa = a.data();
  const T* pb = b.data();
#pragma omp parallel for schedule(static) if (parallel::worth_parallel(out.size())) \
    num_threads(parallel::thread_count())
  for (std::ptrdiff_t i = 0; i < n; ++i) o[i] = f(pa[i], pb[i]);
  return out;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x + y; }, "add");
}
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return zip(a, b, [](T x, T y) { return x / y; }, "div");
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, T s) {
  return map(a, [s](T x) { return x + s; });
}
template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, T s) {
  return map(a, [s](T x) { return x - s; });
}
template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, T s) {
  return map(a, [s](T x) { return x * s; });
}
template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, T s) {
  return map(a, [s](T x) { return x / s; });
}
template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  return mul(a, s);
}

template <class T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  return map(a, [](T x) { return std::exp(x); });
}

template <class T>
BasicTensor<T> ln(const BasicTensor<T>& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!(a[i] > T{0})) throw DomainError("ln: non-positive input at index " + std::to_string(i));
  return map(a, [](T x) { return std::log(x); });
}

template <class T>
BasicTensor<T> clip(const BasicTensor<T>& a, T lo, T hi) {
  require(lo <= hi, "clip: lower bound exceeds upper bound");
  return map(a, [lo, hi](T x) { return std::clamp(x, lo, hi); });
}

// ---- reductions ------------------------------------------------------------

template <class T>
double sum(std::span<const T> a) {
  const std::size_t blocks = (a.size() + detail::kReduceBlock - 1) / detail::kReduceBlock;
  std::vector<double> partial(blocks, 0.0);
  const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(blocks);
#pragma omp parallel for schedule(static) if (blocks > 1 && parallel::worth_parallel(a.size())) \
    num_threads(parallel::thread_count())
  for (std::ptrdiff_t b = 0; b < nb; ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * detail::kReduceBlock;
    const std::size_t hi = std::min(a.size(), lo + detail::kReduceBlock);
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i) acc += a[i];
    partial[static_cast<std::size_t>(b)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

template <class T>
double sum(const BasicTensor<T>& a) {
  return sum(a.span());
}

template <class T>
double mean(const BasicTensor<T>& a) {
  require(!a.empty(), "mean of an empty tensor");
  return sum(a) / static_cast<double>(a.size());
}

// Index of the largest entry; ties resolve to the lowest index.
template <class T>
std::size_t argmax(std::span<const T> v) {
  require(!v.empty(), "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <class T>
std::size_t argmax(const BasicTensor<T>& v) {
  return argmax(v.span());
}

// ---- matrix products -------------------------------------------------------

// C = A * B
template <class T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  detail::check_matrix(a, "matmul");
  detail::check_matrix(b, "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> c({m, n});
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (parallel::worth_parallel(m * n * k)) \
    num_threads(parallel::thread_count())
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    T* crow = c.data() + static_cast<std::size_t>(i) * n;
    const T* arow = a.data() + static_cast<std::size_t>(i) * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A * B^T; the dense-layer forward product (weights stored [out x in]).
template <class T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  detail::check_matrix(a, "matmul_nt");
  detail::check_matrix(b, "matmul_nt");
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Matrix<T> c({m, n});
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (parallel::worth_parallel(m * n * k)) \
    num_threads(parallel::thread_count())
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    const T* arow = a.data() + static_cast<std::size_t>(i) * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b.data() + j * k;
      // four independent accumulators so the loop vectorizes without -ffast-math
      T acc[4] = {T{0}, T{0}, T{0}, T{0}};
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        acc[0] += arow[p] * brow[p];
        acc[1] += arow[p + 1] * brow[p + 1];
        acc[2] += arow[p + 2] * brow[p + 2];
        acc[3] += arow[p + 3] * brow[p + 3];
      }
      for (; p < k; ++p) acc[0] += arow[p] * brow[p];
      c(static_cast<std::size_t>(i), j) = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
  }
  return c;
}

// C = A^T * B; weight-gradient accumulation over a batch.
template <class T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  detail::check_matrix(a, "matmul_tn");
  detail::check_matrix(b, "matmul_tn");
  require(a.rows() == b.rows(), "matmul_tn: inner dimensions differ " + shape_str(a.shape()) + "^T x " +
                                    shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<T> c({k, n});
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static) if (parallel::worth_parallel(m * n * k)) \
    num_threads(parallel::thread_count())
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    T* crow = c.data() + static_cast<std::size_t>(i) * n;
    for (std::size_t p = 0; p < m; ++p) {
      const T av = a(p, static_cast<std::size_t>(i));
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// ---- log-softmax -----------------------------------------------------------

/// out[i] = v[i] - logsumexp(v), computed with max subtraction.
template <class T>
void log_softmax_into(std::span<const T> v, std::span<T> out) {
  require(v.size() >= 2, "log_softmax needs at least two entries");
  require(out.size() == v.size(), "log_softmax: output length mismatch");
  T hi = -std::numeric_limits<T>::infinity();
  for (T x : v) {
    if (!std::isfinite(x)) throw DomainError("log_softmax: non-finite input");
    hi = std::max(hi, x);
  }
  double acc = 0.0;
  for (T x : v) acc += std::exp(static_cast<double>(x - hi));
  const T lse = hi + static_cast<T>(std::log(acc));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
}

template <class T>
std::vector<T> log_softmax(std::span<const T> v) {
  std::vector<T> out(v.size());
  log_softmax_into(v, std::span<T>(out));
  return out;
}

template <class T>
std::vector<T> log_softmax(const std::vector<T>& v) {
  return log_softmax(std::span<const T>(v));
}

// Row-wise log-softmax of a [batch x classes] matrix.
template <class T>
Matrix<T> log_softmax_rows(const Matrix<T>& logits) {
  detail::check_matrix(logits, "log_softmax_rows");
  Matrix<T> out(logits.shape());
  for (std::size_t r = 0; r < logits.rows(); ++r) log_softmax_into(logits.row(r), out.row(r));
  return out;
}

}  // namespace nfa::kernels

#endif  // NFA_KERNELS_HPP
