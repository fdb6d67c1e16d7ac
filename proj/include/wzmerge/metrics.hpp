#pragma once

#include <optional>
#include <span>
#include <vector>

#include "wzmerge/ttc.hpp"

namespace wzmerge {

// One frame is the TTC of every monitored vehicle at one tick. Totals follow
// the usual exposed-time definitions:
//   TET = sum over ticks and vehicles of  I(0 < ttc <= 2) * dt
//   TIT = sum over ticks and vehicles of  (2 - ttc) * I(0 < ttc <= 2) * dt
using TtcFrame = std::vector<double>;

double frame_exposed_count(std::span<const double> frame);
double frame_severity(std::span<const double> frame);

double accumulate_tet(const std::vector<TtcFrame>& frames, double tick_s);
double accumulate_tit(const std::vector<TtcFrame>& frames, double tick_s);

inline constexpr double kStoppedSpeedFps = 1.0;

struct MergeRecord {
  double position_ft = 0.0;  // front bumper at the merge tick
  double speed_fps = 0.0;
};

struct RemainingDistanceStats {
  size_t merged_count = 0;
  size_t stopped_count = 0;  // merges entered below kStoppedSpeedFps
  double mean_ft = 0.0;
  double median_ft = 0.0;
  double p15_ft = 0.0;
  double p85_ft = 0.0;
  double min_ft = 0.0;
  double max_ft = 0.0;
};

// Distance left to the closure point at the moment of each merge. No merges
// yields an empty optional rather than a row of zeros.
std::optional<RemainingDistanceStats> remaining_distance_stats(
    std::span<const MergeRecord> merges, double closure_point_ft);

}  // namespace wzmerge
