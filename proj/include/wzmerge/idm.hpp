#pragma once

#include <limits>

#include "wzmerge/road.hpp"

namespace wzmerge {

// Car-following parameters. a comes from the vehicle class, v0 from the
// segment speed limit; headway/standstill/comfort-braking values are shared by
// both classes.
struct IdmParams {
  double v0_fps = 0.0;       // desired speed
  double headway_s = 1.0;    // T
  double min_gap_ft = 8.2;   // s0
  double accel_fps2 = 0.0;   // a
  double comfort_decel_fps2 = 9.8;  // b
  double delta = 4.0;
  double accel_cap_fps2 = 0.0;  // class clamp, >= a
  double decel_cap_fps2 = 0.0;  // class clamp, positive magnitude
};

IdmParams idm_params_for(const VehicleClass& cls, double segment_limit_fps);

inline constexpr double kFreeRoadGap = std::numeric_limits<double>::infinity();

// IDM acceleration for a follower at speed v with bumper gap `gap_ft` to its
// leader and closing speed `closing_fps` (follower minus leader). Pass
// kFreeRoadGap when there is no leader. A finite non-positive gap means an
// upstream integration or merge bug and faults instead of clamping.
double idm_accel(double v_fps, double gap_ft, double closing_fps, const IdmParams& p);

}  // namespace wzmerge
