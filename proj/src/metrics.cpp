#include "wzmerge/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace wzmerge {

double frame_exposed_count(std::span<const double> frame) {
  double n = 0.0;
  for (double ttc : frame)
    if (is_exposed(ttc)) n += 1.0;
  return n;
}

double frame_severity(std::span<const double> frame) {
  double s = 0.0;
  for (double ttc : frame)
    if (is_exposed(ttc)) s += kConflictTtcS - ttc;
  return s;
}

double accumulate_tet(const std::vector<TtcFrame>& frames, double tick_s) {
  if (!(tick_s > 0.0)) throw Error("data: non-positive tick");
  double total = 0.0;
  for (const auto& f : frames) total += frame_exposed_count(f);
  return total * tick_s;
}

double accumulate_tit(const std::vector<TtcFrame>& frames, double tick_s) {
  if (!(tick_s > 0.0)) throw Error("data: non-positive tick");
  double total = 0.0;
  for (const auto& f : frames) total += frame_severity(f);
  return total * tick_s;
}

std::optional<RemainingDistanceStats> remaining_distance_stats(
    std::span<const MergeRecord> merges, double closure_point_ft) {
  if (merges.empty()) return std::nullopt;

  std::vector<double> remaining;
  remaining.reserve(merges.size());
  RemainingDistanceStats st;
  st.merged_count = merges.size();
  double sum = 0.0;
  for (const auto& m : merges) {
    const double d = closure_point_ft - m.position_ft;
    if (d < 0.0) throw Error("data: merge recorded downstream of the closure point");
    remaining.push_back(d);
    sum += d;
    if (m.speed_fps < kStoppedSpeedFps) ++st.stopped_count;
  }
  std::sort(remaining.begin(), remaining.end());
  st.mean_ft = sum / static_cast<double>(remaining.size());
  st.median_ft = percentile_sorted(remaining, 0.50);
  st.p15_ft = percentile_sorted(remaining, 0.15);
  st.p85_ft = percentile_sorted(remaining, 0.85);
  st.min_ft = remaining.front();
  st.max_ft = remaining.back();
  return st;
}

}  // namespace wzmerge
