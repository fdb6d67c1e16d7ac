#pragma once

#include <array>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>

#include "wzmerge/sim.hpp"
#include "wzmerge/ttc.hpp"

namespace wzmerge {

inline constexpr size_t kWindowSteps = 20;
inline constexpr size_t kFeatureCount = 5;
inline constexpr size_t kWindowValues = kWindowSteps * kFeatureCount;

enum class Direction : uint8_t { Forward, Rear };

const char* to_string(Direction d);
Direction direction_from_string(std::string_view s);

// 20 consecutive ticks of one truck/neighbor pair, oldest row first. Row
// features: truck speed, truck accel, neighbor speed, neighbor accel, gap.
struct FeatureWindow {
  std::array<double, kWindowValues> values{};
  uint64_t truck_id = 0;
  uint64_t neighbor_id = 0;
  bool neighbor_is_truck = false;
  uint32_t end_tick = 0;

  double at(size_t step, size_t feature) const {
    return values[step * kFeatureCount + feature];
  }
  double& at(size_t step, size_t feature) {
    return values[step * kFeatureCount + feature];
  }
};

struct LabeledSample {
  FeatureWindow window;
  Direction direction = Direction::Forward;
  int label = 0;  // 1 when the final row is a conflict state
};

// Relative state at the window's final row, oriented follower-minus-leader for
// the given direction, fed through the closing-time solve and the strict
// conflict band.
int label_from_final_row(const FeatureWindow& w, Direction d);

// One pair observation at one tick.
struct PairObs {
  uint32_t tick = 0;
  uint64_t neighbor_id = 0;
  bool neighbor_is_truck = false;
  double truck_speed = 0.0;
  double truck_accel = 0.0;
  double neighbor_speed = 0.0;
  double neighbor_accel = 0.0;
  double gap_ft = 0.0;
};

struct WindowSkips {
  uint64_t neighbor_changed = 0;
  uint64_t negative_gap = 0;
  uint64_t interrupted = 0;  // neighbor absent or tick gap in the stream
  uint64_t total() const { return neighbor_changed + negative_gap + interrupted; }
};

// Maintains per-(truck, direction) streams of contiguous same-neighbor
// observations and serves 20-tick windows off their tails. Any break
// (neighbor change, negative gap, missing tick) restarts the stream and is
// counted once when accumulated progress is lost.
class PairTracker {
 public:
  void feed(uint64_t truck_id, Direction d, uint32_t tick,
            const std::optional<PairObs>& obs);
  void drop_truck(uint64_t truck_id);
  std::optional<FeatureWindow> window(uint64_t truck_id, Direction d) const;
  const WindowSkips& skips() const { return skips_; }

 private:
  using Key = std::pair<uint64_t, uint8_t>;
  std::map<Key, std::deque<PairObs>> streams_;
  WindowSkips skips_;
};

// Builds the pair observation for a held right-lane truck from live simulator
// state; nullopt when no neighbor exists on that side. A laterally
// overlapping neighbor surfaces as a negative gap and is rejected downstream.
std::optional<PairObs> make_pair_obs(const Simulator& sim, const Vehicle& truck,
                                     Direction d);

// Streams labeled windows out of a running simulation. observe() must be
// called once after every sim.step(). Samples reach the sink in canonical
// (truck_id, end_tick, direction) order regardless of interleaving; a truck's
// samples are only released once every lower-id truck has finished merging.
class WindowCollector {
 public:
  using Sink = std::function<void(const LabeledSample&)>;
  explicit WindowCollector(Sink sink) : sink_(std::move(sink)) {}

  void observe(const Simulator& sim);
  void finish();

  const WindowSkips& skips() const { return tracker_.skips(); }
  uint64_t emitted_count() const { return emitted_; }
  uint64_t truck_tick_count() const { return truck_ticks_; }

 private:
  void flush_ready(uint64_t watermark_id);

  PairTracker tracker_;
  Sink sink_;
  std::map<uint64_t, std::vector<LabeledSample>> pending_;  // active trucks
  std::map<uint64_t, std::vector<LabeledSample>> done_;     // awaiting release
  uint64_t emitted_ = 0;
  uint64_t truck_ticks_ = 0;
};

// Offline extraction over a recorded trajectory log; same stream rules as the
// live collector, returned in canonical order.
std::vector<LabeledSample> extract_samples(const TrajectoryLog& log,
                                           const WorkZoneGeometry& geom, Direction d,
                                           WindowSkips* skips_out = nullptr);

struct Dataset {
  std::vector<LabeledSample> samples;

  size_t positives() const;
  size_t size() const { return samples.size(); }
};

// Stratified by label; class order is preserved inside each side. Both sides
// receive at least one sample of every class that has two or more; a dataset
// with a single label class is rejected. The mask form lets callers split
// without materializing both halves.
std::vector<char> stratified_train_mask(std::span<const int> labels, double train_fraction,
                                        uint64_t seed);
std::pair<Dataset, Dataset> split_stratified(const Dataset& d, double train_fraction,
                                             uint64_t seed);

struct NormStats {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{};
};

// Per-feature z-score statistics over every row of the training windows
// (population standard deviation). A zero-variance feature is a fault.
NormStats fit_normalizer(const Dataset& train);
FeatureWindow apply_normalizer(const NormStats& n, const FeatureWindow& w);

// CSV: "# config_hash=... seed=..." comment, then
// sample_id,direction,label,f0..f99 with features row-major.
class DatasetCsvWriter {
 public:
  DatasetCsvWriter(std::ostream& os, std::string_view config_hash, uint64_t seed);
  void write(const LabeledSample& s);
  uint64_t rows_written() const { return next_id_; }

 private:
  std::ostream& os_;
  uint64_t next_id_ = 0;
};

Dataset read_dataset_csv(std::istream& is);
// Streaming form; fn receives the zero-based data-row index. The sample
// reference is reused between calls.
void for_each_dataset_row(std::istream& is,
                          const std::function<void(uint64_t, const LabeledSample&)>& fn);

}  // namespace wzmerge
