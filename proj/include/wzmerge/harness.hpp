#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "wzmerge/metrics.hpp"
#include "wzmerge/policies.hpp"

namespace wzmerge {

struct TrainOptions {
  double learning_rate = 1e-3;
  size_t batch_size = 256;
  size_t max_epochs = 12;
  double dropout = 0.2;
  size_t patience = 3;
  double pos_weight = 0.0;  // 0 = negatives/positives of the fit split
  double val_fraction = 0.1;
  size_t hidden = 50;
  double train_fraction = 0.8;
  // Stratified cap on the train split per direction; keeps a full-corpus
  // training run inside the desk-scale budget. 0 = no cap.
  size_t max_train_samples = 120000;
};

// One resolved configuration drives every subcommand. Loaded from JSON, then
// individual fields may be overridden by CLI flags before anything runs.
struct RunConfig {
  uint64_t seed = 7;
  double tick_s = 0.1;
  std::string out_dir = "out";

  double gen_duration_s = 36000.0;
  double gen_volume_fraction = 1.0;
  // Phase 1 of gen-data: a collection run under the kinematic human-driver
  // rule, at the flowing demand the gap and Bayes baselines are fit from.
  // 0.55 of full capacity reproduces the 1,120 car / 280 truck per hour
  // collection rate; two hours keeps both fitting pools comfortably above
  // their 100-observation floors.
  double collection_duration_s = 7200.0;
  double collection_volume_fraction = 0.55;

  TrainOptions train;

  double eval_duration_s = 3600.0;
  std::vector<std::string> policies = {"lstm", "bayes", "p50", "p85"};
  std::vector<double> volumes = {0.33, 0.66, 1.0};

  double advance_warning_len_ft = 3900.0;
  double taper_len_ft = 600.0;
  double activity_len_ft = 5280.0;
  double termination_len_ft = 900.0;
  double lane_width_ft = 12.0;
  double upstream_limit_mph = 55.0;
  double workzone_limit_mph = 50.0;

  void validate() const;
};

RunConfig load_run_config(const std::string& path);
// FNV over the canonical serialized form; keys sorted, shortest-round-trip
// number formatting. Any field change changes the hash.
std::string config_hash(const RunConfig& cfg);

WorkZoneGeometry geometry_from(const RunConfig& cfg);
Scenario make_scenario(const RunConfig& cfg, double volume_fraction, uint64_t seed);

// Output file names under RunConfig::out_dir.
namespace outfile {
inline constexpr const char* kDatasetForward = "dataset_forward.csv";
inline constexpr const char* kDatasetRear = "dataset_rear.csv";
inline constexpr const char* kGapObservations = "gap_observations.csv";
inline constexpr const char* kAcceptedGaps = "accepted_gaps.csv";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kModelForward = "model_forward.json";
inline constexpr const char* kModelRear = "model_rear.json";
inline constexpr const char* kThresholds = "thresholds.json";
inline constexpr const char* kBayes = "bayes.json";
inline constexpr const char* kTrainingMetrics = "training_metrics.json";
inline constexpr const char* kEvalCsv = "eval_report.csv";
inline constexpr const char* kEvalJson = "eval_report.json";
inline constexpr const char* kFigTet = "fig5_tet.csv";
inline constexpr const char* kFigTit = "fig6_tit.csv";
inline constexpr const char* kFigRemaining = "fig7_remaining.csv";
inline constexpr const char* kSummary = "summary.txt";
}  // namespace outfile

std::string out_path(const RunConfig& cfg, const char* name);

// Safety exposure and merge outcomes for one (policy, volume) cell.
// The headline TET/TIT use the merging-pair scope: each policy-controlled
// truck contributes min(forward TTC, rear TTC) per tick, measured against its
// target-lane neighbors while held and against its same-lane neighbors after
// merging, until its front bumper passes the closure point. The all-vehicles
// scope (every same-lane follower/leader pair on the road) is reported
// alongside for context.
struct CellResult {
  std::string policy;
  double volume_fraction = 0.0;
  uint64_t cell_seed = 0;
  double tet_s = 0.0;
  double tit_s = 0.0;
  double tet_all_s = 0.0;
  double tit_all_s = 0.0;
  uint64_t controlled_trucks = 0;
  uint64_t merged_count = 0;
  uint64_t stopped_merge_count = 0;   // commanded merges entered below 1 ft/s
  uint64_t stopped_while_held = 0;    // trucks that ever stood still while held
  uint64_t held_at_end = 0;
  uint64_t spawned = 0;
  uint64_t exited = 0;
  std::optional<RemainingDistanceStats> remaining;
};

class MetricsCollector {
 public:
  MetricsCollector(const WorkZoneGeometry& geom, double tick_s);

  // Call once after every Simulator::step().
  void observe(const Simulator& sim);
  CellResult finalize(const Simulator& sim) const;

 private:
  double pair_ttc(const Vehicle& follower, const Vehicle& leader, double gap_ft) const;

  WorkZoneGeometry geom_;
  double tick_s_;
  double tet_merge_ = 0.0, tit_merge_ = 0.0;
  double tet_all_ = 0.0, tit_all_ = 0.0;
  std::set<uint64_t> controlled_;
  std::set<uint64_t> stopped_while_held_;
};

CellResult run_eval_cell(const RunConfig& cfg, PolicyKind kind, double volume_fraction,
                         const PolicyModels& models);

// Subcommands; each throws wzmerge::Error with a category-prefixed message.
void cmd_gen_data(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_report(const RunConfig& cfg);

}  // namespace wzmerge
