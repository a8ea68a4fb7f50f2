#pragma once

#include <cmath>
#include <numbers>

namespace ablab {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wrap an angle difference into (-pi, pi]. Trajectories themselves stay
/// unwrapped; only detection comparisons go through here.
inline double wrap_pi(double x) {
  double w = std::remainder(x, kTwoPi);
  if (w <= -std::numbers::pi) w += kTwoPi;
  return w;
}

}  // namespace ablab
