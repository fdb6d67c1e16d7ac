#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "wzmerge/metrics.hpp"

using namespace wzmerge;

// Three monitored vehicles over 40 ticks at dt = 0.1 s:
//   A: ttc 1.5 s for the first 30 ticks, then no collision
//   B: ttc 2.0 s for the first 10 ticks, then no collision (inclusive edge)
//   C: never on a collision course
// Hand totals:
//   TET = 30*0.1 + 10*0.1           = 4.0 s
//   TIT = 30*0.1*(2-1.5) + 10*0.1*0 = 1.5 s
static std::vector<TtcFrame> golden_frames() {
  std::vector<TtcFrame> frames;
  for (int t = 0; t < 40; ++t) {
    TtcFrame f(3, kNoCollision);
    if (t < 30) f[0] = 1.5;
    if (t < 10) f[1] = 2.0;
    frames.push_back(f);
  }
  return frames;
}

TEST_CASE("hand-built three-vehicle log") {
  const auto frames = golden_frames();
  CHECK(accumulate_tet(frames, 0.1) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(accumulate_tit(frames, 0.1) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("threshold edge cases") {
  // Exactly 2.0 s counts for exposure but adds zero severity.
  std::vector<TtcFrame> frames{{2.0}};
  CHECK(accumulate_tet(frames, 0.1) == doctest::Approx(0.1));
  CHECK(accumulate_tit(frames, 0.1) == doctest::Approx(0.0));

  // Just above the threshold counts for neither.
  frames = {{2.0000001}};
  CHECK(accumulate_tet(frames, 0.1) == doctest::Approx(0.0));
  CHECK(accumulate_tit(frames, 0.1) == doctest::Approx(0.0));

  // Zero and negative ttc are not exposure (no collision course).
  frames = {{0.0, -1.0}};
  CHECK(accumulate_tet(frames, 0.1) == doctest::Approx(0.0));
}

TEST_CASE("empty logs and empty frames total zero") {
  CHECK(accumulate_tet({}, 0.1) == 0.0);
  CHECK(accumulate_tit({}, 0.1) == 0.0);
  std::vector<TtcFrame> frames{{}, {}, {}};
  CHECK(accumulate_tet(frames, 0.1) == 0.0);
  CHECK(accumulate_tit(frames, 0.1) == 0.0);
}

TEST_CASE("frame helpers") {
  TtcFrame f{1.0, 2.0, 3.0, kNoCollision, 0.5};
  CHECK(frame_exposed_count(f) == doctest::Approx(3.0));
  CHECK(frame_severity(f) == doctest::Approx((2.0 - 1.0) + 0.0 + (2.0 - 0.5)));
}

TEST_CASE("remaining distance statistics") {
  const double closure = 4500.0;
  std::vector<MergeRecord> merges{
      {4000.0, 50.0},  // 500 ft remaining
      {4400.0, 0.5},   // 100 ft remaining, entered below walking speed
      {3500.0, 60.0},  // 1000 ft remaining
  };
  const auto stats = remaining_distance_stats(merges, closure);
  REQUIRE(stats.has_value());
  CHECK(stats->merged_count == 3);
  CHECK(stats->stopped_count == 1);
  CHECK(stats->mean_ft == doctest::Approx((500.0 + 100.0 + 1000.0) / 3.0));
  CHECK(stats->median_ft == doctest::Approx(500.0));
  CHECK(stats->min_ft == doctest::Approx(100.0));
  CHECK(stats->max_ft == doctest::Approx(1000.0));
  CHECK(stats->p15_ft >= stats->min_ft);
  CHECK(stats->p85_ft <= stats->max_ft);
  CHECK(stats->p15_ft <= stats->median_ft);
  CHECK(stats->median_ft <= stats->p85_ft);
}

TEST_CASE("no merges yields no row") {
  CHECK(!remaining_distance_stats({}, 4500.0).has_value());
}

TEST_CASE("stopped boundary is strict") {
  std::vector<MergeRecord> merges{{4000.0, kStoppedSpeedFps}};
  const auto at = remaining_distance_stats(merges, 4500.0);
  REQUIRE(at.has_value());
  CHECK(at->stopped_count == 0);  // exactly 1 ft/s is moving

  merges = {{4000.0, kStoppedSpeedFps - 1e-9}};
  const auto below = remaining_distance_stats(merges, 4500.0);
  REQUIRE(below.has_value());
  CHECK(below->stopped_count == 1);
}
