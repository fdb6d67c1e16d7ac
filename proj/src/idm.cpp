#include "wzmerge/idm.hpp"

#include <algorithm>
#include <cmath>

namespace wzmerge {

IdmParams idm_params_for(const VehicleClass& cls, double segment_limit_fps) {
  if (!(segment_limit_fps > 0.0)) throw Error("sim: non-positive segment limit");
  IdmParams p;
  p.v0_fps = std::min(segment_limit_fps, cls.max_speed_fps);
  p.accel_fps2 = cls.max_accel_fps2;
  p.accel_cap_fps2 = cls.max_accel_fps2;
  p.decel_cap_fps2 = cls.max_decel_fps2;
  return p;
}

double idm_accel(double v_fps, double gap_ft, double closing_fps, const IdmParams& p) {
  if (!(p.v0_fps > 0.0 && p.accel_fps2 > 0.0)) throw Error("sim: idm params not initialised");
  if (v_fps < 0.0) throw Error("sim: negative speed in idm");

  const double free_term = 1.0 - std::pow(v_fps / p.v0_fps, p.delta);
  double interaction = 0.0;
  if (std::isfinite(gap_ft)) {
    if (gap_ft <= 0.0) throw Error("sim: non-positive gap with leader present");
    const double dyn = v_fps * p.headway_s +
                       v_fps * closing_fps /
                           (2.0 * std::sqrt(p.accel_fps2 * p.comfort_decel_fps2));
    const double s_star = p.min_gap_ft + std::max(0.0, dyn);
    const double ratio = s_star / gap_ft;
    interaction = ratio * ratio;
  }
  const double raw = p.accel_fps2 * (free_term - interaction);
  return std::clamp(raw, -p.decel_cap_fps2, p.accel_cap_fps2);
}

}  // namespace wzmerge
