#pragma once

#include <cmath>
#include <numbers>

namespace pignn {

/// Maps an angle to (-pi, pi]; values already inside are returned unchanged.
inline double wrap_to_pi(double theta) {
  constexpr double pi = std::numbers::pi;
  if (theta > -pi && theta <= pi) return theta;
  double w = std::fmod(pi - theta, 2.0 * pi);
  if (w < 0.0) w += 2.0 * pi;
  return pi - w;
}

}  // namespace pignn
