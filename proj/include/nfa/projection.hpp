#ifndef NFA_PROJECTION_HPP
#define NFA_PROJECTION_HPP

#include <span>
#include <string>
#include <vector>

namespace nfa::attack {

enum class Norm { linf, l2 };

std::string to_string(Norm p);
Norm norm_from_string(const std::string& name);

/// ||a - b||_p
double distance(std::span<const float> a, std::span<const float> b, Norm p);

/// Maps a candidate into {x : ||x - orig||_p <= eps} intersected with [0,1]^d.
///   linf: per-pixel clamp to [orig - eps, orig + eps], then to [0,1].
///   l2:   rescale the residual to norm eps when longer, then clamp to [0,1].
/// Feasible candidates come back bit-for-bit unchanged, so the map is idempotent.
std::vector<float> project(std::span<const float> candidate, std::span<const float> orig, double eps, Norm p);

/// True when `x` is inside the ball (with `slack_ulps` float ulps of slack at
/// the boundary) and inside [0,1]^d.
bool feasible(std::span<const float> x, std::span<const float> orig, double eps, Norm p, int slack_ulps = 4);

}  // namespace nfa::attack

#endif  // NFA_PROJECTION_HPP
