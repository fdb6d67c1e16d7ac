#pragma once

#include <limits>

#include "wzmerge/util.hpp"

namespace wzmerge {

// Relative state of a follower/leader pair, follower minus leader. delta_d is
// the bumper-to-bumper gap and must be non-negative; positive delta_v means
// the pair is closing.
struct TtcInput {
  double delta_a = 0.0;  // ft/s^2
  double delta_v = 0.0;  // ft/s
  double delta_d = 0.0;  // ft
};

inline constexpr double kNoCollision = std::numeric_limits<double>::infinity();
inline constexpr double kConflictTtcS = 2.0;
inline constexpr double kLinearAccelEps = 1e-9;

// Smallest strictly positive root of 0.5*da*t^2 + dv*t - dd = 0, the time at
// which the gap closes under constant relative acceleration. Returns
// kNoCollision when no such root exists. |da| < kLinearAccelEps degrades to
// the linear case dd/dv. Root extraction uses the q-form so catastrophic
// cancellation cannot occur for small da or nearly balanced terms.
double solve_ttc(const TtcInput& in);

// Conflict labeling is strict at both ends: 0 < ttc < 2 s.
inline bool is_conflict(double ttc_s) { return ttc_s > 0.0 && ttc_s < kConflictTtcS; }

// Exposure for the time-based safety totals is inclusive at the threshold:
// 0 < ttc <= 2 s.
inline bool is_exposed(double ttc_s) { return ttc_s > 0.0 && ttc_s <= kConflictTtcS; }

}  // namespace wzmerge
