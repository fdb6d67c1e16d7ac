#include "wzmerge/ttc.hpp"

#include <algorithm>
#include <cmath>

namespace wzmerge {

double solve_ttc(const TtcInput& in) {
  if (!(std::isfinite(in.delta_a) && std::isfinite(in.delta_v) && std::isfinite(in.delta_d)))
    throw Error("data: non-finite ttc input");
  if (in.delta_d < 0.0) throw Error("data: negative gap in ttc input");

  if (std::abs(in.delta_a) < kLinearAccelEps) {
    if (in.delta_v <= 0.0) return kNoCollision;
    const double t = in.delta_d / in.delta_v;
    return t > 0.0 ? t : kNoCollision;
  }

  // a t^2 + b t + c with a = da/2, b = dv, c = -dd
  const double a = 0.5 * in.delta_a;
  const double b = in.delta_v;
  const double c = -in.delta_d;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kNoCollision;
  const double sq = std::sqrt(disc);
  const double q = -0.5 * (b + std::copysign(sq, b == 0.0 ? 1.0 : b));
  const double r1 = q / a;
  // q == 0 happens only when b == 0 and disc == 0; the double root is t = 0.
  const double r2 = q != 0.0 ? c / q : 0.0;

  double best = kNoCollision;
  if (r1 > 0.0) best = r1;
  if (r2 > 0.0) best = std::min(best, r2);
  return best;
}

}  // namespace wzmerge
