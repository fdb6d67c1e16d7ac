#pragma once

#include "wzmerge/util.hpp"

namespace wzmerge {

inline constexpr double kFeetPerMile = 5280.0;
inline constexpr double kSecondsPerHour = 3600.0;

// Internal kinematics are ft, s, ft/s, ft/s^2 everywhere; mph exists only at
// configuration boundaries.
inline double mph_to_fps(double mph) {
  if (mph < 0.0) throw Error("config: negative speed");
  return mph * kFeetPerMile / kSecondsPerHour;
}

inline double fps_to_mph(double fps) { return fps * kSecondsPerHour / kFeetPerMile; }

}  // namespace wzmerge
