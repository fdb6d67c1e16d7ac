#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wzmerge/lstm.hpp"
#include "wzmerge/sim.hpp"
#include "wzmerge/windows.hpp"

namespace wzmerge {

// "kinematic" is the bootstrap rule used internally by data generation before
// gap thresholds exist; it is not offered on the evaluation grid.
enum class PolicyKind { Lstm, Bayes, GapP50, GapP85, KinematicGap };

std::string_view to_string(PolicyKind k);
PolicyKind policy_from_string(std::string_view s);

enum class MergeRationale { LstmClear, GapAccepted, BayesLowRisk, Held };

struct MergeDecision {
  bool merge_now = false;
  MergeRationale rationale = MergeRationale::Held;
};

// Everything a policy may look at for one held truck on one tick. Gaps are
// bumper-to-bumper against the target-lane neighbors; absent neighbor = +inf.
// Windows are unset when the neighbor is absent or has fewer than 20
// contiguous ticks of paired history.
struct TruckContext {
  uint64_t truck_id = 0;
  double truck_speed_fps = 0.0;
  bool front_present = false;
  bool rear_present = false;
  bool front_is_truck = false;
  bool rear_is_truck = false;
  double gap_front_ft = kFreeRoadGap;
  double gap_rear_ft = kFreeRoadGap;
  double rear_speed_fps = 0.0;
  std::optional<FeatureWindow> window_front;
  std::optional<FeatureWindow> window_rear;
};

struct GapThresholds {
  double forward_p50 = 0.0;
  double forward_p85 = 0.0;
  double rear_p50 = 0.0;
  double rear_p85 = 0.0;
};

enum class GapPercentile { P50, P85 };

// One gap measurement. Per-tick observations carry the window's conflict
// label; accepted-gap records taken at commanded merges leave it 0.
struct GapObservation {
  Direction direction = Direction::Forward;
  int label = 0;  // 1 = conflict
  double gap_ft = 0.0;
  bool neighbor_is_truck = false;
};

// Empirical percentiles with linear interpolation, fit per direction.
// Fewer than 100 observations in either direction is a hard fault.
GapThresholds fit_gap_percentiles(std::span<const GapObservation> obs);

// Per-direction Bayes components: a logistic prior on the neighbor-type
// indicator and Laplace-smoothed gap likelihood histograms over a fixed-width
// binning of the observed gap range.
struct BayesDirectionModel {
  double prior_b0 = 0.0;
  double prior_b1 = 0.0;
  double bin_width_ft = 5.0;
  double gap_origin_ft = 0.0;
  std::vector<double> like_conflict;
  std::vector<double> like_clear;

  size_t bin_index(double gap_ft) const;
  double prior(bool neighbor_is_truck) const;
  double posterior(double gap_ft, bool neighbor_is_truck) const;
};

struct BayesModel {
  BayesDirectionModel forward;
  BayesDirectionModel rear;

  const BayesDirectionModel& side(Direction d) const {
    return d == Direction::Forward ? forward : rear;
  }
};

constexpr double kBayesBinWidthFt = 5.0;
constexpr size_t kMinGapObservations = 100;

// Prior fit by Newton-Raphson maximum likelihood on the type indicator; falls
// back to Haldane-corrected group logits when a group is empty or separated.
// A direction with only one conflict class is a hard fault.
BayesModel fit_bayes(std::span<const GapObservation> obs);

MergeDecision decide_lstm(const TruckContext& ctx, const ModelArtifact& forward_model,
                          const ModelArtifact& rear_model);
MergeDecision decide_gap(const TruckContext& ctx, const GapThresholds& thr,
                         GapPercentile percentile);
MergeDecision decide_bayes(const TruckContext& ctx, const BayesModel& model);
// Bootstrap rule: front gap >= s0 + v*T, rear gap >= s0 + v_rear*T.
MergeDecision decide_kinematic(const TruckContext& ctx);

// JSON round-trip for the fitted baselines.
void save_thresholds(const GapThresholds& t, const std::string& path,
                     std::string_view config_hash, uint64_t seed);
GapThresholds load_thresholds(const std::string& path);
void save_bayes(const BayesModel& m, const std::string& path, std::string_view config_hash,
                uint64_t seed);
BayesModel load_bayes(const std::string& path);

struct PolicyModels {
  const ModelArtifact* forward_lstm = nullptr;
  const ModelArtifact* rear_lstm = nullptr;
  const GapThresholds* thresholds = nullptr;
  const BayesModel* bayes = nullptr;
};

// Drives one policy over a running simulation. Call decide() once per tick
// before Simulator::step(); it observes the current state, maintains the
// paired-history trackers the LSTM policy needs, and returns the merge
// commands to pass into step(). The Bayes baseline acts at a 1 s cadence;
// every other policy acts every tick.
class PolicyEngine {
 public:
  PolicyEngine(PolicyKind kind, const PolicyModels& models, double tick_s);

  std::vector<MergeCommand> decide(const Simulator& sim);

  PolicyKind kind() const { return kind_; }

 private:
  TruckContext make_context(const Simulator& sim, const Vehicle& truck) const;

  PolicyKind kind_;
  PolicyModels models_;
  size_t decision_period_ticks_;
  PairTracker tracker_;
  std::vector<uint64_t> tracked_;  // held trucks seen on the previous tick
};

}  // namespace wzmerge
