#include "nfa/projection.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>

#include "nfa/error.hpp"

namespace nfa::attack {

namespace {

// Rounding slack for the l2 ball: coordinates are stored as f32 after rescaling.
double l2_slack(std::size_t d) { return 4.0 * std::sqrt(static_cast<double>(d)) * FLT_EPSILON; }

double ulp_at(double v) {
  const float f = static_cast<float>(std::abs(v));
  return static_cast<double>(std::nextafter(f, INFINITY) - f);
}

}  // namespace

std::string to_string(Norm p) { return p == Norm::linf ? "inf" : "2"; }

Norm norm_from_string(const std::string& name) {
  if (name == "inf" || name == "linf") return Norm::linf;
  if (name == "2" || name == "l2") return Norm::l2;
  throw ContractViolation("unknown norm '" + name + "' (expected inf or 2)");
}

double distance(std::span<const float> a, std::span<const float> b, Norm p) {
  require(a.size() == b.size(), "distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    if (p == Norm::linf)
      acc = std::max(acc, std::abs(d));
    else
      acc += d * d;
  }
  return p == Norm::linf ? acc : std::sqrt(acc);
}

std::vector<float> project(std::span<const float> candidate, std::span<const float> orig, double eps, Norm p) {
  require(candidate.size() == orig.size(), "project: candidate and original differ in length");
  require(eps >= 0.0, "project: eps must be non-negative");
  std::vector<float> out(candidate.begin(), candidate.end());
  if (p == Norm::linf) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const float lo = std::max(0.0f, static_cast<float>(orig[i] - eps));
      const float hi = std::min(1.0f, static_cast<float>(orig[i] + eps));
      out[i] = std::clamp(out[i], lo, hi);
    }
    return out;
  }
  double norm = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double r = static_cast<double>(out[i]) - orig[i];
    norm += r * r;
  }
  norm = std::sqrt(norm);
  if (norm > eps + l2_slack(out.size())) {
    const double k = eps / norm;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = static_cast<float>(orig[i] + (static_cast<double>(out[i]) - orig[i]) * k);
  }
  for (auto& v : out) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

bool feasible(std::span<const float> x, std::span<const float> orig, double eps, Norm p, int slack_ulps) {
  require(x.size() == orig.size(), "feasible: length mismatch");
  for (float v : x)
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  if (p == Norm::linf) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(static_cast<double>(x[i]) - orig[i]);
      const double slack = slack_ulps * ulp_at(std::max(std::abs(static_cast<double>(x[i])), std::abs(static_cast<double>(orig[i]))));
      if (d > eps + slack) return false;
    }
    return true;
  }
  return distance(x, orig, Norm::l2) <= eps + l2_slack(x.size());
}

}  // namespace nfa::attack
