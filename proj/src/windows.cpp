#include "wzmerge/windows.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

namespace wzmerge {

const char* to_string(Direction d) { return d == Direction::Forward ? "forward" : "rear"; }

Direction direction_from_string(std::string_view s) {
  if (s == "forward") return Direction::Forward;
  if (s == "rear") return Direction::Rear;
  throw Error("data: unknown direction '" + std::string(s) + "'");
}

int label_from_final_row(const FeatureWindow& w, Direction d) {
  const size_t last = kWindowSteps - 1;
  const double tv = w.at(last, 0), ta = w.at(last, 1);
  const double nv = w.at(last, 2), na = w.at(last, 3);
  const double gap = w.at(last, 4);
  TtcInput in;
  if (d == Direction::Forward) {
    in = {ta - na, tv - nv, gap};
  } else {
    in = {na - ta, nv - tv, gap};
  }
  return is_conflict(solve_ttc(in)) ? 1 : 0;
}

void PairTracker::feed(uint64_t truck_id, Direction d, uint32_t tick,
                       const std::optional<PairObs>& obs) {
  const Key key{truck_id, static_cast<uint8_t>(d)};
  auto& stream = streams_[key];

  const auto reset = [&](uint64_t WindowSkips::*counter) {
    if (!stream.empty()) {
      skips_.*counter += 1;
      stream.clear();
    }
  };

  if (!obs.has_value()) {
    reset(&WindowSkips::interrupted);
    return;
  }
  if (obs->gap_ft < 0.0) {
    reset(&WindowSkips::negative_gap);
    return;
  }
  if (!stream.empty()) {
    if (stream.back().neighbor_id != obs->neighbor_id) {
      reset(&WindowSkips::neighbor_changed);
    } else if (stream.back().tick + 1 != tick) {
      reset(&WindowSkips::interrupted);
    }
  }
  stream.push_back(*obs);
  stream.back().tick = tick;  // the feed clock is authoritative
  if (stream.size() > kWindowSteps) stream.pop_front();
}

void PairTracker::drop_truck(uint64_t truck_id) {
  streams_.erase({truck_id, static_cast<uint8_t>(Direction::Forward)});
  streams_.erase({truck_id, static_cast<uint8_t>(Direction::Rear)});
}

std::optional<FeatureWindow> PairTracker::window(uint64_t truck_id, Direction d) const {
  const auto it = streams_.find({truck_id, static_cast<uint8_t>(d)});
  if (it == streams_.end() || it->second.size() < kWindowSteps) return std::nullopt;
  const auto& stream = it->second;
  FeatureWindow w;
  w.truck_id = truck_id;
  w.neighbor_id = stream.back().neighbor_id;
  w.neighbor_is_truck = stream.back().neighbor_is_truck;
  w.end_tick = stream.back().tick;
  for (size_t s = 0; s < kWindowSteps; ++s) {
    const PairObs& o = stream[s];
    w.at(s, 0) = o.truck_speed;
    w.at(s, 1) = o.truck_accel;
    w.at(s, 2) = o.neighbor_speed;
    w.at(s, 3) = o.neighbor_accel;
    w.at(s, 4) = o.gap_ft;
  }
  return w;
}

std::optional<PairObs> make_pair_obs(const Simulator& sim, const Vehicle& truck,
                                     Direction d) {
  const NeighborView nb = sim.target_lane_neighbors(truck);
  const Vehicle* n = d == Direction::Forward ? nb.front : nb.rear;
  if (n == nullptr) return std::nullopt;
  PairObs o;
  o.neighbor_id = n->id;  // tick is stamped by PairTracker::feed
  o.neighbor_is_truck = n->kind == VehicleKind::LargeTruck;
  o.truck_speed = truck.speed_fps;
  o.truck_accel = truck.accel_fps2;
  o.neighbor_speed = n->speed_fps;
  o.neighbor_accel = n->accel_fps2;
  o.gap_ft = d == Direction::Forward ? nb.gap_front_ft : nb.gap_rear_ft;
  return o;
}

namespace {

LabeledSample sample_from_window(const FeatureWindow& w, Direction d) {
  LabeledSample s;
  s.window = w;
  s.direction = d;
  s.label = label_from_final_row(w, d);
  return s;
}

}  // namespace

void WindowCollector::observe(const Simulator& sim) {
  const uint32_t tick = sim.ticks_done() - 1;  // last completed tick
  const auto& geom = sim.scenario().geom;

  std::vector<const Vehicle*> held;
  for (const auto& v : sim.lane_vehicles(LaneId::Right))
    if (v.kind == VehicleKind::LargeTruck && v.merge_held &&
        geom.in_merge_area(v.position_ft))
      held.push_back(&v);
  std::sort(held.begin(), held.end(),
            [](const Vehicle* a, const Vehicle* b) { return a->id < b->id; });

  std::set<uint64_t> live;
  for (const Vehicle* t : held) {
    live.insert(t->id);
    ++truck_ticks_;
    for (Direction d : {Direction::Forward, Direction::Rear}) {
      const auto obs = make_pair_obs(sim, *t, d);
      tracker_.feed(t->id, d, tick, obs);
      if (auto w = tracker_.window(t->id, d); w.has_value())
        pending_[t->id].push_back(sample_from_window(*w, d));
    }
  }

  // Trucks that merged or exited are complete; their samples wait until no
  // lower-id truck is still active so output order is canonical.
  for (auto it = pending_.begin(); it != pending_.end();) {
    if (live.count(it->first) == 0) {
      tracker_.drop_truck(it->first);
      done_[it->first] = std::move(it->second);
      it = pending_.erase(it);
    } else {
      ++it;
    }
  }
  const uint64_t watermark = live.empty() ? UINT64_MAX : *live.begin();
  flush_ready(watermark);
}

void WindowCollector::flush_ready(uint64_t watermark_id) {
  for (auto it = done_.begin(); it != done_.end() && it->first < watermark_id;) {
    for (const auto& s : it->second) {
      sink_(s);
      ++emitted_;
    }
    it = done_.erase(it);
  }
}

void WindowCollector::finish() {
  for (auto& [id, samples] : pending_) done_[id] = std::move(samples);
  pending_.clear();
  flush_ready(UINT64_MAX);
}

std::vector<LabeledSample> extract_samples(const TrajectoryLog& log,
                                           const WorkZoneGeometry& geom, Direction d,
                                           WindowSkips* skips_out) {
  PairTracker tracker;
  std::vector<LabeledSample> out;

  const auto& recs = log.records();
  size_t i = 0;
  while (i < recs.size()) {
    const uint32_t tick = recs[i].tick;
    size_t j = i;
    while (j < recs.size() && recs[j].tick == tick) ++j;

    std::vector<const TickRecord*> left;
    std::vector<const TickRecord*> trucks;
    for (size_t k = i; k < j; ++k) {
      const TickRecord& r = recs[k];
      if (r.lane == LaneId::Left) left.push_back(&r);
      if (r.lane == LaneId::Right && r.kind == VehicleKind::LargeTruck &&
          geom.in_merge_area(r.position_ft))
        trucks.push_back(&r);
    }
    std::sort(left.begin(), left.end(), [](const TickRecord* a, const TickRecord* b) {
      return a->position_ft < b->position_ft;
    });
    std::sort(trucks.begin(), trucks.end(), [](const TickRecord* a, const TickRecord* b) {
      return a->vehicle_id < b->vehicle_id;
    });

    for (const TickRecord* t : trucks) {
      // nearest strictly ahead / strictly behind by front bumper
      const TickRecord* front = nullptr;
      const TickRecord* rear = nullptr;
      for (const TickRecord* l : left) {
        if (l->position_ft > t->position_ft) {
          front = l;
          break;
        }
      }
      for (auto it = left.rbegin(); it != left.rend(); ++it) {
        if ((*it)->position_ft < t->position_ft) {
          rear = *it;
          break;
        }
      }
      const TickRecord* n = d == Direction::Forward ? front : rear;
      std::optional<PairObs> obs;
      if (n != nullptr) {
        PairObs o;
        o.tick = tick;
        o.neighbor_id = n->vehicle_id;
        o.neighbor_is_truck = n->kind == VehicleKind::LargeTruck;
        o.truck_speed = t->speed_fps;
        o.truck_accel = t->accel_fps2;
        o.neighbor_speed = n->speed_fps;
        o.neighbor_accel = n->accel_fps2;
        o.gap_ft = d == Direction::Forward
                       ? (n->position_ft - vehicle_class(n->kind).length_ft) - t->position_ft
                       : (t->position_ft - vehicle_class(t->kind).length_ft) - n->position_ft;
        obs = o;
      }
      tracker.feed(t->vehicle_id, d, tick, obs);
      if (auto w = tracker.window(t->vehicle_id, d); w.has_value())
        out.push_back(sample_from_window(*w, d));
    }
    i = j;
  }

  std::stable_sort(out.begin(), out.end(), [](const LabeledSample& a, const LabeledSample& b) {
    if (a.window.truck_id != b.window.truck_id) return a.window.truck_id < b.window.truck_id;
    return a.window.end_tick < b.window.end_tick;
  });
  if (skips_out != nullptr) *skips_out = tracker.skips();
  return out;
}

size_t Dataset::positives() const {
  size_t n = 0;
  for (const auto& s : samples) n += static_cast<size_t>(s.label);
  return n;
}

std::vector<char> stratified_train_mask(std::span<const int> labels, double train_fraction,
                                        uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error("data: train fraction outside (0, 1)");
  if (labels.empty()) throw Error("data: empty dataset");
  size_t pos = 0;
  for (int l : labels) pos += l == 1 ? 1 : 0;
  if (pos == 0 || pos == labels.size())
    throw Error("data: dataset has a single label class");

  std::vector<size_t> idx_by_class[2];
  for (size_t i = 0; i < labels.size(); ++i)
    idx_by_class[labels[i] == 1 ? 1 : 0].push_back(i);

  std::vector<char> in_train(labels.size(), 0);
  for (int cls = 0; cls < 2; ++cls) {
    auto& idx = idx_by_class[cls];
    Rng rng(substream_seed(seed, cls == 1 ? "split:pos" : "split:neg"));
    rng.shuffle(idx);
    const size_t n = idx.size();
    size_t take = static_cast<size_t>(
        std::llround(train_fraction * static_cast<double>(n)));
    if (n >= 2) take = std::clamp<size_t>(take, 1, n - 1);
    else take = n;  // lone sample goes to train
    for (size_t k = 0; k < take; ++k) in_train[idx[k]] = 1;
  }
  return in_train;
}

std::pair<Dataset, Dataset> split_stratified(const Dataset& d, double train_fraction,
                                             uint64_t seed) {
  std::vector<int> labels(d.samples.size());
  for (size_t i = 0; i < d.samples.size(); ++i) labels[i] = d.samples[i].label;
  const std::vector<char> in_train = stratified_train_mask(labels, train_fraction, seed);

  Dataset train, test;
  for (size_t i = 0; i < d.samples.size(); ++i)
    (in_train[i] ? train : test).samples.push_back(d.samples[i]);
  return {std::move(train), std::move(test)};
}

NormStats fit_normalizer(const Dataset& train) {
  if (train.samples.empty()) throw Error("data: fit_normalizer on empty dataset");
  NormStats st;
  std::array<double, kFeatureCount> sum{}, sumsq{};
  const double n =
      static_cast<double>(train.samples.size()) * static_cast<double>(kWindowSteps);
  for (const auto& s : train.samples)
    for (size_t step = 0; step < kWindowSteps; ++step)
      for (size_t f = 0; f < kFeatureCount; ++f) {
        const double v = s.window.at(step, f);
        sum[f] += v;
        sumsq[f] += v * v;
      }
  for (size_t f = 0; f < kFeatureCount; ++f) {
    st.mean[f] = sum[f] / n;
    const double var = std::max(0.0, sumsq[f] / n - st.mean[f] * st.mean[f]);
    st.stddev[f] = std::sqrt(var);
    if (!(st.stddev[f] > 0.0))
      throw Error("data: zero-variance feature " + std::to_string(f));
  }
  return st;
}

FeatureWindow apply_normalizer(const NormStats& n, const FeatureWindow& w) {
  FeatureWindow out = w;
  for (size_t step = 0; step < kWindowSteps; ++step)
    for (size_t f = 0; f < kFeatureCount; ++f)
      out.at(step, f) = (w.at(step, f) - n.mean[f]) / n.stddev[f];
  return out;
}

DatasetCsvWriter::DatasetCsvWriter(std::ostream& os, std::string_view config_hash,
                                   uint64_t seed)
    : os_(os) {
  os_ << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  os_ << "sample_id,direction,label";
  for (size_t i = 0; i < kWindowValues; ++i) os_ << ",f" << i;
  os_ << "\n";
}

void DatasetCsvWriter::write(const LabeledSample& s) {
  os_ << next_id_++ << ',' << to_string(s.direction) << ',' << s.label;
  for (size_t i = 0; i < kWindowValues; ++i) os_ << ',' << fmt_double(s.window.values[i]);
  os_ << '\n';
}

void for_each_dataset_row(std::istream& is,
                          const std::function<void(uint64_t, const LabeledSample&)>& fn) {
  std::string line;
  std::vector<std::string_view> fields;
  bool header_seen = false;
  uint64_t row = 0;
  LabeledSample s;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;  // fixed schema, first non-comment line
      continue;
    }
    split_csv_line(line, fields);
    if (fields.size() != 3 + kWindowValues)
      throw Error("io: dataset row with " + std::to_string(fields.size()) + " fields");
    s.direction = direction_from_string(fields[1]);
    s.label = static_cast<int>(parse_int(fields[2]));
    if (s.label != 0 && s.label != 1) throw Error("io: label outside {0, 1}");
    for (size_t i = 0; i < kWindowValues; ++i)
      s.window.values[i] = parse_double(fields[3 + i]);
    fn(row, s);
    ++row;
  }
}

Dataset read_dataset_csv(std::istream& is) {
  Dataset d;
  for_each_dataset_row(is,
                       [&](uint64_t, const LabeledSample& s) { d.samples.push_back(s); });
  return d;
}

}  // namespace wzmerge
