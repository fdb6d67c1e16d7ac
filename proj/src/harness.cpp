#include "wzmerge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

namespace wzmerge {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

size_t ticks_for(double duration_s, double tick_s) {
  return static_cast<size_t>(std::llround(duration_s / tick_s));
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      throw Error("config: unknown key '" + key + "' in " + where);
  }
}

json read_json_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io: cannot open '" + path + "'");
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error("config: unparseable JSON in '" + path + "': " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io: cannot open '" + path + "' for writing");
  os << body;
  if (!os) throw Error("io: write failed for '" + path + "'");
}

void write_json_file(const json& j, const std::string& path) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace

void RunConfig::validate() const {
  if (!(tick_s > 0.0 && tick_s <= 1.0)) throw Error("config: tick_s outside (0, 1]");
  if (out_dir.empty()) throw Error("config: empty out_dir");
  if (gen_duration_s < 0.0 || collection_duration_s < 0.0 || eval_duration_s < 0.0)
    throw Error("config: negative duration");
  if (!(gen_volume_fraction > 0.0 && gen_volume_fraction <= 1.0))
    throw Error("config: gen volume_fraction outside (0, 1]");
  if (!(collection_volume_fraction > 0.0 && collection_volume_fraction <= 1.0))
    throw Error("config: collection volume_fraction outside (0, 1]");
  if (policies.empty()) throw Error("config: empty policy list");
  for (const std::string& p : policies) {
    const PolicyKind k = policy_from_string(p);
    if (k == PolicyKind::KinematicGap)
      throw Error("config: policy 'kinematic' is internal to data generation");
  }
  if (volumes.empty()) throw Error("config: empty volume list");
  for (double v : volumes)
    if (!(v > 0.0 && v <= 1.0)) throw Error("config: volume_fraction outside (0, 1]");

  if (!(train.learning_rate > 0.0)) throw Error("config: non-positive learning_rate");
  if (train.batch_size == 0) throw Error("config: zero batch_size");
  if (train.max_epochs == 0) throw Error("config: zero max_epochs");
  if (!(train.dropout >= 0.0 && train.dropout < 1.0))
    throw Error("config: dropout outside [0, 1)");
  if (train.patience == 0) throw Error("config: zero patience");
  if (train.pos_weight < 0.0) throw Error("config: negative pos_weight");
  if (!(train.val_fraction > 0.0 && train.val_fraction < 1.0))
    throw Error("config: val_fraction outside (0, 1)");
  if (train.hidden == 0) throw Error("config: zero hidden size");
  if (!(train.train_fraction > 0.0 && train.train_fraction < 1.0))
    throw Error("config: train_fraction outside (0, 1)");

  geometry_from(*this).validate();
}

RunConfig load_run_config(const std::string& path) {
  const json j = read_json_file(path);
  if (!j.is_object()) throw Error("config: top level of '" + path + "' is not an object");
  check_keys(j, {"seed", "tick_s", "out_dir", "gen", "train", "eval", "geometry"},
             "config");

  RunConfig cfg;
  cfg.seed = j.value("seed", cfg.seed);
  cfg.tick_s = j.value("tick_s", cfg.tick_s);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);

  if (j.contains("gen")) {
    const json& g = j.at("gen");
    check_keys(g,
               {"duration_s", "volume_fraction", "collection_duration_s",
                "collection_volume_fraction"},
               "gen");
    cfg.gen_duration_s = g.value("duration_s", cfg.gen_duration_s);
    cfg.gen_volume_fraction = g.value("volume_fraction", cfg.gen_volume_fraction);
    cfg.collection_duration_s = g.value("collection_duration_s", cfg.collection_duration_s);
    cfg.collection_volume_fraction =
        g.value("collection_volume_fraction", cfg.collection_volume_fraction);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t,
               {"learning_rate", "batch_size", "max_epochs", "dropout", "patience",
                "pos_weight", "val_fraction", "hidden", "train_fraction",
                "max_train_samples"},
               "train");
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
    cfg.train.dropout = t.value("dropout", cfg.train.dropout);
    cfg.train.patience = t.value("patience", cfg.train.patience);
    cfg.train.pos_weight = t.value("pos_weight", cfg.train.pos_weight);
    cfg.train.val_fraction = t.value("val_fraction", cfg.train.val_fraction);
    cfg.train.hidden = t.value("hidden", cfg.train.hidden);
    cfg.train.train_fraction = t.value("train_fraction", cfg.train.train_fraction);
    cfg.train.max_train_samples = t.value("max_train_samples", cfg.train.max_train_samples);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, {"duration_s", "policies", "volumes"}, "eval");
    cfg.eval_duration_s = e.value("duration_s", cfg.eval_duration_s);
    if (e.contains("policies")) cfg.policies = e.at("policies").get<std::vector<std::string>>();
    if (e.contains("volumes")) cfg.volumes = e.at("volumes").get<std::vector<double>>();
  }
  if (j.contains("geometry")) {
    const json& g = j.at("geometry");
    check_keys(g,
               {"advance_warning_len_ft", "taper_len_ft", "activity_len_ft",
                "termination_len_ft", "lane_width_ft", "upstream_limit_mph",
                "workzone_limit_mph"},
               "geometry");
    cfg.advance_warning_len_ft = g.value("advance_warning_len_ft", cfg.advance_warning_len_ft);
    cfg.taper_len_ft = g.value("taper_len_ft", cfg.taper_len_ft);
    cfg.activity_len_ft = g.value("activity_len_ft", cfg.activity_len_ft);
    cfg.termination_len_ft = g.value("termination_len_ft", cfg.termination_len_ft);
    cfg.lane_width_ft = g.value("lane_width_ft", cfg.lane_width_ft);
    cfg.upstream_limit_mph = g.value("upstream_limit_mph", cfg.upstream_limit_mph);
    cfg.workzone_limit_mph = g.value("workzone_limit_mph", cfg.workzone_limit_mph);
  }
  return cfg;
}

namespace {

// Hash payload: everything that shapes the results. The output directory is
// deliberately absent so reruns into different locations stay byte-identical.
json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["tick_s"] = cfg.tick_s;
  j["gen"] = {{"duration_s", cfg.gen_duration_s},
              {"volume_fraction", cfg.gen_volume_fraction},
              {"collection_duration_s", cfg.collection_duration_s},
              {"collection_volume_fraction", cfg.collection_volume_fraction}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"max_epochs", cfg.train.max_epochs},
                {"dropout", cfg.train.dropout},
                {"patience", cfg.train.patience},
                {"pos_weight", cfg.train.pos_weight},
                {"val_fraction", cfg.train.val_fraction},
                {"hidden", cfg.train.hidden},
                {"train_fraction", cfg.train.train_fraction},
                {"max_train_samples", cfg.train.max_train_samples}};
  j["eval"] = {{"duration_s", cfg.eval_duration_s},
               {"policies", cfg.policies},
               {"volumes", cfg.volumes}};
  j["geometry"] = {{"advance_warning_len_ft", cfg.advance_warning_len_ft},
                   {"taper_len_ft", cfg.taper_len_ft},
                   {"activity_len_ft", cfg.activity_len_ft},
                   {"termination_len_ft", cfg.termination_len_ft},
                   {"lane_width_ft", cfg.lane_width_ft},
                   {"upstream_limit_mph", cfg.upstream_limit_mph},
                   {"workzone_limit_mph", cfg.workzone_limit_mph}};
  return j;
}

}  // namespace

std::string config_hash(const RunConfig& cfg) {
  // nlohmann::json orders object keys, so dump() is canonical for this tree.
  return to_hex(fnv1a64(run_config_to_json(cfg).dump()));
}

WorkZoneGeometry geometry_from(const RunConfig& cfg) {
  WorkZoneGeometry g;
  g.advance_warning_len_ft = cfg.advance_warning_len_ft;
  g.taper_len_ft = cfg.taper_len_ft;
  g.activity_len_ft = cfg.activity_len_ft;
  g.termination_len_ft = cfg.termination_len_ft;
  g.lane_width_ft = cfg.lane_width_ft;
  g.upstream_limit_fps = mph_to_fps(cfg.upstream_limit_mph);
  g.workzone_limit_fps = mph_to_fps(cfg.workzone_limit_mph);
  return g;
}

Scenario make_scenario(const RunConfig& cfg, double volume_fraction, uint64_t seed) {
  Scenario sc;
  sc.geom = geometry_from(cfg);
  sc.demand = derive_demand(volume_fraction);
  sc.tick_s = cfg.tick_s;
  sc.seed = seed;
  sc.validate();
  return sc;
}

std::string out_path(const RunConfig& cfg, const char* name) {
  return (fs::path(cfg.out_dir) / name).string();
}

MetricsCollector::MetricsCollector(const WorkZoneGeometry& geom, double tick_s)
    : geom_(geom), tick_s_(tick_s) {
  if (!(tick_s > 0.0)) throw Error("config: non-positive tick");
}

double MetricsCollector::pair_ttc(const Vehicle& follower, const Vehicle& leader,
                                  double gap_ft) const {
  return solve_ttc({follower.accel_fps2 - leader.accel_fps2,
                    follower.speed_fps - leader.speed_fps, gap_ft});
}

void MetricsCollector::observe(const Simulator& sim) {
  for (const Vehicle& v : sim.lane_vehicles(LaneId::Right)) {
    if (v.kind == VehicleKind::LargeTruck && v.merge_held) {
      controlled_.insert(v.id);
      if (v.speed_fps < kStoppedSpeedFps) stopped_while_held_.insert(v.id);
    }
  }

  const double closure = geom_.closure_point();
  for (LaneId lane : {LaneId::Left, LaneId::Right}) {
    const auto& vec = sim.lane_vehicles(lane);

    // All-vehicles scope: every same-lane follower/leader pair.
    for (size_t i = 0; i + 1 < vec.size(); ++i) {
      const double gap = vec[i + 1].rear_ft() - vec[i].position_ft;
      const double ttc = pair_ttc(vec[i], vec[i + 1], gap);
      if (is_exposed(ttc)) {
        tet_all_ += tick_s_;
        tit_all_ += (kConflictTtcS - ttc) * tick_s_;
      }
    }

    // Merging-pair scope: controlled trucks up to the closure point, against
    // target-lane neighbors while held and same-lane neighbors once merged.
    for (const Vehicle& v : vec) {
      if (v.kind != VehicleKind::LargeTruck || v.position_ft > closure) continue;
      if (controlled_.find(v.id) == controlled_.end()) continue;
      const NeighborView nv =
          v.merge_held ? sim.target_lane_neighbors(v) : sim.neighbors_in(lane, v);
      double worst = kNoCollision;
      if (nv.front != nullptr && nv.gap_front_ft > 0.0)
        worst = std::min(worst, pair_ttc(v, *nv.front, nv.gap_front_ft));
      if (nv.rear != nullptr && nv.gap_rear_ft > 0.0)
        worst = std::min(worst, pair_ttc(*nv.rear, v, nv.gap_rear_ft));
      if (is_exposed(worst)) {
        tet_merge_ += tick_s_;
        tit_merge_ += (kConflictTtcS - worst) * tick_s_;
      }
    }
  }
}

CellResult MetricsCollector::finalize(const Simulator& sim) const {
  CellResult r;
  r.tet_s = tet_merge_;
  r.tit_s = tit_merge_;
  r.tet_all_s = tet_all_;
  r.tit_all_s = tit_all_;
  r.controlled_trucks = controlled_.size();

  std::vector<MergeRecord> recs;
  for (const MergeEvent& e : sim.merge_events())
    if (e.commanded) recs.push_back({e.position_ft, e.speed_fps});
  r.merged_count = recs.size();
  r.remaining = remaining_distance_stats(recs, geom_.closure_point());
  r.stopped_merge_count = r.remaining.has_value() ? r.remaining->stopped_count : 0;
  r.stopped_while_held = stopped_while_held_.size();
  r.held_at_end = sim.held_truck_ids().size();
  r.spawned = sim.spawned_count();
  r.exited = sim.exited_count();
  return r;
}

CellResult run_eval_cell(const RunConfig& cfg, PolicyKind kind, double volume_fraction,
                         const PolicyModels& models) {
  const uint64_t cell_seed = substream_seed(
      cfg.seed, "eval:" + std::string(to_string(kind)) + ":" + fmt_double(volume_fraction));
  const Scenario sc = make_scenario(cfg, volume_fraction, cell_seed);
  Simulator sim(sc);
  PolicyEngine engine(kind, models, cfg.tick_s);
  MetricsCollector mc(sc.geom, cfg.tick_s);

  const size_t n = ticks_for(cfg.eval_duration_s, cfg.tick_s);
  for (size_t k = 0; k < n; ++k) {
    const std::vector<MergeCommand> commands = engine.decide(sim);
    sim.step(commands);
    mc.observe(sim);
  }

  CellResult r = mc.finalize(sim);
  r.policy = std::string(to_string(kind));
  r.volume_fraction = volume_fraction;
  r.cell_seed = cell_seed;
  return r;
}

namespace {

GapObservation gap_obs_from(const LabeledSample& s) {
  GapObservation o;
  o.direction = s.direction;
  o.label = s.label;
  o.gap_ft = s.window.at(kWindowSteps - 1, 4);
  o.neighbor_is_truck = s.window.neighbor_is_truck;
  return o;
}

// Accepted gaps: the target-lane gaps present when a commanded merge
// executed. One observation per finite side; an absent neighbor is an
// unbounded acceptance, not a measurement.
void append_accepted_gaps(const Simulator& sim, std::vector<GapObservation>& out) {
  for (const MergeEvent& e : sim.merge_events()) {
    if (!e.commanded) continue;
    if (std::isfinite(e.gap_front_ft))
      out.push_back({Direction::Forward, 0, e.gap_front_ft, false});
    if (std::isfinite(e.gap_rear_ft))
      out.push_back({Direction::Rear, 0, e.gap_rear_ft, false});
  }
}

uint64_t commanded_merge_count(const Simulator& sim) {
  uint64_t n = 0;
  for (const MergeEvent& e : sim.merge_events()) n += e.commanded ? 1 : 0;
  return n;
}

json thresholds_to_json(const GapThresholds& t) {
  return json{{"forward_p50", t.forward_p50},
              {"forward_p85", t.forward_p85},
              {"rear_p50", t.rear_p50},
              {"rear_p85", t.rear_p85}};
}

}  // namespace

void cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const std::string hash = config_hash(cfg);

  // Phase 1: the collection run. Trucks merge under the kinematic
  // human-driver rule at flowing demand, producing the two pools the
  // baselines are fit from: gaps accepted at commanded merges (percentile
  // thresholds) and labeled per-tick gap observations (Bayes likelihoods).
  std::ofstream f_gap(out_path(cfg, outfile::kGapObservations), std::ios::binary);
  std::ofstream f_acc(out_path(cfg, outfile::kAcceptedGaps), std::ios::binary);
  if (!f_gap || !f_acc)
    throw Error("io: cannot open gap outputs under '" + cfg.out_dir + "'");
  f_gap << "# config_hash=" << hash << " seed=" << cfg.seed << "\n"
        << "direction,label,gap_ft,neighbor_is_truck\n";
  f_acc << "# config_hash=" << hash << " seed=" << cfg.seed << "\n"
        << "direction,gap_ft\n";

  std::vector<GapObservation> accepted;
  uint64_t accepted_n[2] = {0, 0}, gap_obs_n = 0;
  json collection_sim;
  {
    const Scenario sc = make_scenario(cfg, cfg.collection_volume_fraction,
                                      substream_seed(cfg.seed, "gen:collection"));
    Simulator sim(sc);
    PolicyEngine engine(PolicyKind::KinematicGap, {}, cfg.tick_s);
    WindowCollector coll([&](const LabeledSample& s) {
      const GapObservation o = gap_obs_from(s);
      f_gap << to_string(o.direction) << ',' << o.label << ',' << fmt_double(o.gap_ft)
            << ',' << (o.neighbor_is_truck ? 1 : 0) << '\n';
      ++gap_obs_n;
    });
    const size_t n = ticks_for(cfg.collection_duration_s, cfg.tick_s);
    for (size_t k = 0; k < n; ++k) {
      sim.step(engine.decide(sim));
      coll.observe(sim);
    }
    coll.finish();
    append_accepted_gaps(sim, accepted);
    for (const GapObservation& o : accepted) {
      f_acc << to_string(o.direction) << ',' << fmt_double(o.gap_ft) << '\n';
      ++accepted_n[static_cast<size_t>(o.direction)];
    }
    collection_sim = {{"spawned", sim.spawned_count()},
                      {"exited", sim.exited_count()},
                      {"commanded_merges", commanded_merge_count(sim)}};
  }
  f_gap.flush();
  f_acc.flush();
  if (!f_gap || !f_acc) throw Error("io: write failed under '" + cfg.out_dir + "'");

  GapThresholds thr;
  try {
    thr = fit_gap_percentiles(accepted);
  } catch (const Error& e) {
    throw Error(std::string(e.what()) +
                " (collection phase; raise gen.collection_duration_s)");
  }

  // Phase 2: the recorded dataset run, trucks merging under P50 acceptance.
  std::ofstream f_fwd(out_path(cfg, outfile::kDatasetForward), std::ios::binary);
  std::ofstream f_rear(out_path(cfg, outfile::kDatasetRear), std::ios::binary);
  if (!f_fwd || !f_rear)
    throw Error("io: cannot open dataset outputs under '" + cfg.out_dir + "'");
  DatasetCsvWriter w_fwd(f_fwd, hash, cfg.seed);
  DatasetCsvWriter w_rear(f_rear, hash, cfg.seed);

  uint64_t samples[2] = {0, 0}, positives[2] = {0, 0};
  const Scenario sc =
      make_scenario(cfg, cfg.gen_volume_fraction, substream_seed(cfg.seed, "gen:main"));
  Simulator sim(sc);
  PolicyModels ambient;
  ambient.thresholds = &thr;
  PolicyEngine engine(PolicyKind::GapP50, ambient, cfg.tick_s);
  WindowCollector coll([&](const LabeledSample& s) {
    (s.direction == Direction::Forward ? w_fwd : w_rear).write(s);
    const size_t d = static_cast<size_t>(s.direction);
    ++samples[d];
    positives[d] += s.label == 1 ? 1 : 0;
  });

  const size_t n = ticks_for(cfg.gen_duration_s, cfg.tick_s);
  for (size_t k = 0; k < n; ++k) {
    sim.step(engine.decide(sim));
    coll.observe(sim);
  }
  coll.finish();

  if (samples[0] + samples[1] == 0)
    throw Error("data: empty dataset (no windows emitted; raise gen.duration_s)");
  for (Direction d : {Direction::Forward, Direction::Rear}) {
    if (positives[static_cast<size_t>(d)] == 0)
      throw Error("data: no conflict samples in the " + std::string(to_string(d)) +
                  " dataset; a classifier cannot be trained from it");
  }
  f_fwd.flush();
  f_rear.flush();
  if (!f_fwd || !f_rear)
    throw Error("io: write failed under '" + cfg.out_dir + "'");

  uint64_t commanded_merges = 0, mandatory_merges = 0;
  for (const MergeEvent& e : sim.merge_events()) (e.commanded ? commanded_merges : mandatory_merges) += 1;

  json manifest;
  manifest["format_version"] = 1;
  manifest["kind"] = "gen-data-manifest";
  manifest["config_hash"] = hash;
  manifest["seed"] = cfg.seed;
  manifest["tick_s"] = cfg.tick_s;
  manifest["duration_s"] = cfg.gen_duration_s;
  manifest["volume_fraction"] = cfg.gen_volume_fraction;
  manifest["demand"] = {{"cars_per_hour", sc.demand.cars_per_hour},
                        {"trucks_per_hour", sc.demand.trucks_per_hour}};
  manifest["collection"] = {{"duration_s", cfg.collection_duration_s},
                            {"volume_fraction", cfg.collection_volume_fraction},
                            {"gap_observations", gap_obs_n},
                            {"accepted_gaps",
                             {{"forward", accepted_n[0]}, {"rear", accepted_n[1]}}},
                            {"thresholds", thresholds_to_json(thr)},
                            {"sim", collection_sim}};
  manifest["datasets"] = {
      {"forward", {{"samples", samples[0]}, {"positives", positives[0]}}},
      {"rear", {{"samples", samples[1]}, {"positives", positives[1]}}}};
  const WindowSkips& sk = coll.skips();
  manifest["window_skips"] = {{"neighbor_changed", sk.neighbor_changed},
                              {"negative_gap", sk.negative_gap},
                              {"interrupted", sk.interrupted}};
  manifest["truck_ticks"] = coll.truck_tick_count();
  manifest["sim"] = {{"spawned", sim.spawned_count()},
                     {"exited", sim.exited_count()},
                     {"on_road_at_end", sim.on_road_count()},
                     {"commanded_merges", commanded_merges},
                     {"mandatory_merges", mandatory_merges}};
  write_json_file(manifest, out_path(cfg, outfile::kManifest));
}

namespace {

std::vector<GapObservation> read_gap_observations(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io: cannot open '" + path + "'");
  std::vector<GapObservation> out;
  std::string line;
  std::vector<std::string_view> fields;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "direction,label,gap_ft,neighbor_is_truck")
        throw Error("io: unexpected header in '" + path + "'");
      continue;
    }
    split_csv_line(line, fields);
    if (fields.size() != 4)
      throw Error("io: gap observation row with " + std::to_string(fields.size()) +
                  " fields");
    GapObservation o;
    o.direction = direction_from_string(fields[0]);
    o.label = static_cast<int>(parse_int(fields[1]));
    if (o.label != 0 && o.label != 1) throw Error("io: label outside {0, 1}");
    o.gap_ft = parse_double(fields[2]);
    o.neighbor_is_truck = parse_int(fields[3]) != 0;
    out.push_back(o);
  }
  return out;
}

std::vector<GapObservation> read_accepted_gaps(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io: cannot open '" + path + "'");
  std::vector<GapObservation> out;
  std::string line;
  std::vector<std::string_view> fields;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line != "direction,gap_ft")
        throw Error("io: unexpected header in '" + path + "'");
      continue;
    }
    split_csv_line(line, fields);
    if (fields.size() != 2)
      throw Error("io: accepted-gap row with " + std::to_string(fields.size()) + " fields");
    GapObservation o;
    o.direction = direction_from_string(fields[0]);
    o.gap_ft = parse_double(fields[1]);
    out.push_back(o);
  }
  return out;
}

struct LoadedSplit {
  Dataset train;
  Dataset test;
  uint64_t total = 0;
  uint64_t total_positives = 0;
  uint64_t train_available = 0;  // before the cap
};

// Two passes keep the peak footprint at the capped train split plus the test
// split instead of the whole file.
LoadedSplit load_split_capped(const std::string& path, const TrainOptions& t,
                              Direction expect_dir, uint64_t split_seed,
                              uint64_t subsample_seed) {
  std::vector<int> labels;
  {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("io: cannot open '" + path + "'");
    for_each_dataset_row(is, [&](uint64_t, const LabeledSample& s) {
      if (s.direction != expect_dir)
        throw Error("data: sample direction mismatch in '" + path + "'");
      labels.push_back(s.label);
    });
  }
  if (labels.empty()) throw Error("data: empty dataset in '" + path + "'");

  const std::vector<char> mask =
      stratified_train_mask(labels, t.train_fraction, split_seed);

  // Stratified subsample of the train side when over the cap.
  std::vector<char> take(labels.size(), 0);
  std::vector<size_t> by_class[2];
  for (size_t i = 0; i < labels.size(); ++i)
    if (mask[i]) by_class[labels[i] == 1 ? 1 : 0].push_back(i);
  const size_t train_n = by_class[0].size() + by_class[1].size();

  if (t.max_train_samples == 0 || train_n <= t.max_train_samples) {
    for (size_t i = 0; i < labels.size(); ++i) take[i] = mask[i];
  } else {
    const double share =
        static_cast<double>(by_class[1].size()) / static_cast<double>(train_n);
    size_t keep_pos = static_cast<size_t>(
        std::llround(share * static_cast<double>(t.max_train_samples)));
    keep_pos = std::clamp<size_t>(keep_pos, 1, t.max_train_samples - 1);
    keep_pos = std::min(keep_pos, by_class[1].size());
    const size_t keep_neg = std::min(t.max_train_samples - keep_pos, by_class[0].size());
    for (int cls = 0; cls < 2; ++cls) {
      Rng rng(substream_seed(subsample_seed, cls == 1 ? "subsample:pos" : "subsample:neg"));
      rng.shuffle(by_class[cls]);
      const size_t keep = cls == 1 ? keep_pos : keep_neg;
      for (size_t k = 0; k < keep; ++k) take[by_class[cls][k]] = 1;
    }
  }

  LoadedSplit out;
  out.total = labels.size();
  for (int l : labels) out.total_positives += l == 1 ? 1 : 0;
  out.train_available = train_n;

  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io: cannot open '" + path + "'");
  for_each_dataset_row(is, [&](uint64_t row, const LabeledSample& s) {
    if (row >= labels.size()) return;
    if (take[row])
      out.train.samples.push_back(s);
    else if (!mask[row])
      out.test.samples.push_back(s);
  });
  return out;
}

json direction_metrics_json(const ModelArtifact& art, const LoadedSplit& split) {
  const ConfusionMatrix& cm = art.meta.test_confusion;
  return json{
      {"dataset",
       {{"total", split.total},
        {"positives", split.total_positives},
        {"train_available", split.train_available},
        {"train_used", split.train.size()},
        {"test_size", split.test.size()}}},
      {"epochs_run", art.meta.epochs_run},
      {"pos_weight", art.meta.pos_weight_used},
      {"final_train_loss", art.meta.final_train_loss},
      {"best_val_loss", art.meta.best_val_loss},
      {"epoch_train_loss", art.meta.epoch_train_loss},
      {"epoch_val_loss", art.meta.epoch_val_loss},
      {"test_accuracy", art.meta.test_accuracy},
      {"test_recall", cm.recall()},
      {"test_precision", cm.precision()},
      {"test_confusion",
       {{"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}, {"tp", cm.tp}}}};
}

}  // namespace

void cmd_train(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const std::string hash = config_hash(cfg);

  json metrics;
  metrics["format_version"] = 1;
  metrics["kind"] = "training-metrics";
  metrics["config_hash"] = hash;
  metrics["seed"] = cfg.seed;

  for (Direction dir : {Direction::Forward, Direction::Rear}) {
    const bool fwd = dir == Direction::Forward;
    const std::string data_path =
        out_path(cfg, fwd ? outfile::kDatasetForward : outfile::kDatasetRear);
    const std::string label = to_string(dir);

    const LoadedSplit split =
        load_split_capped(data_path, cfg.train, dir,
                          substream_seed(cfg.seed, "train:split:" + label),
                          substream_seed(cfg.seed, "train:subsample:" + label));

    TrainConfig tc;
    tc.learning_rate = cfg.train.learning_rate;
    tc.batch_size = cfg.train.batch_size;
    tc.max_epochs = cfg.train.max_epochs;
    tc.dropout = cfg.train.dropout;
    tc.patience = cfg.train.patience;
    tc.pos_weight = cfg.train.pos_weight;
    tc.val_fraction = cfg.train.val_fraction;
    tc.hidden = cfg.train.hidden;
    tc.seed = substream_seed(cfg.seed, "train:" + label);

    const ModelArtifact art = train_lstm(split.train, split.test, dir, tc);
    save_model(art, out_path(cfg, fwd ? outfile::kModelForward : outfile::kModelRear),
               hash, cfg.seed);
    metrics[label] = direction_metrics_json(art, split);
  }

  // Two gap pools with different jobs: percentile thresholds come from the
  // gaps drivers actually accepted when merging, the Bayes likelihoods from
  // every labeled per-tick observation.
  const std::vector<GapObservation> accepted =
      read_accepted_gaps(out_path(cfg, outfile::kAcceptedGaps));
  GapThresholds thr;
  try {
    thr = fit_gap_percentiles(accepted);
  } catch (const Error& e) {
    throw Error(std::string(e.what()) + " (accepted-gap sample; raise gen.duration_s)");
  }
  save_thresholds(thr, out_path(cfg, outfile::kThresholds), hash, cfg.seed);
  const std::vector<GapObservation> obs =
      read_gap_observations(out_path(cfg, outfile::kGapObservations));
  const BayesModel bayes = fit_bayes(obs);
  save_bayes(bayes, out_path(cfg, outfile::kBayes), hash, cfg.seed);

  metrics["gap_observations"] = obs.size();
  metrics["accepted_gaps"] = accepted.size();
  metrics["thresholds"] = thresholds_to_json(thr);
  metrics["bayes_prior"] = {
      {"forward", {{"b0", bayes.forward.prior_b0}, {"b1", bayes.forward.prior_b1}}},
      {"rear", {{"b0", bayes.rear.prior_b0}, {"b1", bayes.rear.prior_b1}}}};
  write_json_file(metrics, out_path(cfg, outfile::kTrainingMetrics));
}

namespace {

constexpr const char* kEvalCsvHeader =
    "policy,volume_fraction,tet_s,tit_s,merged_count,stopped_merge_count,"
    "mean_remaining_ft,median_remaining_ft,p15_remaining_ft,p85_remaining_ft,"
    "min_remaining_ft,max_remaining_ft";

std::string cell_csv_row(const CellResult& r) {
  std::string row = r.policy + ',' + fmt_double(r.volume_fraction) + ',' +
                    fmt_double(r.tet_s) + ',' + fmt_double(r.tit_s) + ',' +
                    std::to_string(r.merged_count) + ',' +
                    std::to_string(r.stopped_merge_count);
  if (r.remaining.has_value()) {
    const RemainingDistanceStats& s = *r.remaining;
    for (double v : {s.mean_ft, s.median_ft, s.p15_ft, s.p85_ft, s.min_ft, s.max_ft})
      row += ',' + fmt_double(v);
  } else {
    for (int i = 0; i < 6; ++i) row += ",na";
  }
  return row;
}

json cell_to_json(const CellResult& r) {
  json j{{"policy", r.policy},
         {"volume_fraction", r.volume_fraction},
         {"cell_seed", r.cell_seed},
         {"tet_s", r.tet_s},
         {"tit_s", r.tit_s},
         {"tet_all_pairs_s", r.tet_all_s},
         {"tit_all_pairs_s", r.tit_all_s},
         {"controlled_trucks", r.controlled_trucks},
         {"merged_count", r.merged_count},
         {"stopped_merge_count", r.stopped_merge_count},
         {"stopped_while_held", r.stopped_while_held},
         {"held_at_end", r.held_at_end},
         {"spawned", r.spawned},
         {"exited", r.exited}};
  if (r.remaining.has_value()) {
    const RemainingDistanceStats& s = *r.remaining;
    j["remaining_ft"] = {{"mean", s.mean_ft}, {"median", s.median_ft},
                         {"p15", s.p15_ft},   {"p85", s.p85_ft},
                         {"min", s.min_ft},   {"max", s.max_ft}};
  } else {
    j["remaining_ft"] = nullptr;
  }
  return j;
}

}  // namespace

void cmd_eval(const RunConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const std::string hash = config_hash(cfg);

  std::vector<PolicyKind> kinds;
  for (const std::string& p : cfg.policies) kinds.push_back(policy_from_string(p));

  const bool need_lstm =
      std::find(kinds.begin(), kinds.end(), PolicyKind::Lstm) != kinds.end();
  const bool need_thresholds =
      std::find(kinds.begin(), kinds.end(), PolicyKind::GapP50) != kinds.end() ||
      std::find(kinds.begin(), kinds.end(), PolicyKind::GapP85) != kinds.end();
  const bool need_bayes =
      std::find(kinds.begin(), kinds.end(), PolicyKind::Bayes) != kinds.end();

  // Everything is loaded before the first simulation tick.
  ModelArtifact fwd_model, rear_model;
  GapThresholds thresholds;
  BayesModel bayes;
  PolicyModels models;
  if (need_lstm) {
    fwd_model = load_model(out_path(cfg, outfile::kModelForward));
    rear_model = load_model(out_path(cfg, outfile::kModelRear));
    if (fwd_model.direction != Direction::Forward || rear_model.direction != Direction::Rear)
      throw Error("model: direction field does not match the model file name");
    models.forward_lstm = &fwd_model;
    models.rear_lstm = &rear_model;
  }
  if (need_thresholds) {
    thresholds = load_thresholds(out_path(cfg, outfile::kThresholds));
    models.thresholds = &thresholds;
  }
  if (need_bayes) {
    bayes = load_bayes(out_path(cfg, outfile::kBayes));
    models.bayes = &bayes;
  }

  std::vector<CellResult> cells;
  for (PolicyKind kind : kinds)
    for (double vol : cfg.volumes) {
      try {
        cells.push_back(run_eval_cell(cfg, kind, vol, models));
      } catch (const Error& e) {
        throw Error("eval cell " + std::string(to_string(kind)) + "@" + fmt_double(vol) +
                    ": " + e.what());
      }
    }

  std::string csv = "# config_hash=" + hash + " seed=" + std::to_string(cfg.seed) + "\n";
  csv += std::string(kEvalCsvHeader) + "\n";
  for (const CellResult& r : cells) csv += cell_csv_row(r) + "\n";
  write_text_file(out_path(cfg, outfile::kEvalCsv), csv);

  json report;
  report["format_version"] = 1;
  report["kind"] = "evaluation-report";
  report["config_hash"] = hash;
  report["seed"] = cfg.seed;
  report["eval_duration_s"] = cfg.eval_duration_s;
  if (need_lstm) {
    report["models"] = {
        {"forward",
         {{"test_accuracy", fwd_model.meta.test_accuracy},
          {"test_confusion",
           {{"tn", fwd_model.meta.test_confusion.tn},
            {"fp", fwd_model.meta.test_confusion.fp},
            {"fn", fwd_model.meta.test_confusion.fn},
            {"tp", fwd_model.meta.test_confusion.tp}}}}},
        {"rear",
         {{"test_accuracy", rear_model.meta.test_accuracy},
          {"test_confusion",
           {{"tn", rear_model.meta.test_confusion.tn},
            {"fp", rear_model.meta.test_confusion.fp},
            {"fn", rear_model.meta.test_confusion.fn},
            {"tp", rear_model.meta.test_confusion.tp}}}}}};
  }
  json jcells = json::array();
  for (const CellResult& r : cells) jcells.push_back(cell_to_json(r));
  report["cells"] = jcells;
  write_json_file(report, out_path(cfg, outfile::kEvalJson));
}

namespace {

struct ReportTable {
  std::vector<std::string> policies;  // order of first appearance
  std::vector<double> volumes;        // ascending
  // keyed by (policy, volume)
  std::map<std::pair<std::string, double>, const json*> cells;

  const json* at(const std::string& p, double v) const {
    const auto it = cells.find({p, v});
    return it == cells.end() ? nullptr : it->second;
  }
};

ReportTable build_table(const json& report) {
  ReportTable t;
  for (const json& c : report.at("cells")) {
    const std::string p = c.at("policy").get<std::string>();
    const double v = c.at("volume_fraction").get<double>();
    if (std::find(t.policies.begin(), t.policies.end(), p) == t.policies.end())
      t.policies.push_back(p);
    if (std::find(t.volumes.begin(), t.volumes.end(), v) == t.volumes.end())
      t.volumes.push_back(v);
    t.cells[{p, v}] = &c;
  }
  std::sort(t.volumes.begin(), t.volumes.end());
  return t;
}

std::string fig_csv(const ReportTable& t, const std::string& hash, uint64_t seed,
                    const char* metric, bool with_total) {
  std::string csv = "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
  csv += "volume_fraction";
  for (const std::string& p : t.policies) csv += "," + p;
  csv += "\n";
  for (double v : t.volumes) {
    csv += fmt_double(v);
    for (const std::string& p : t.policies) {
      const json* c = t.at(p, v);
      csv += ",";
      csv += c != nullptr ? fmt_double(c->at(metric).get<double>()) : "na";
    }
    csv += "\n";
  }
  if (with_total) {
    csv += "total";
    for (const std::string& p : t.policies) {
      double sum = 0.0;
      bool any = false;
      for (double v : t.volumes) {
        const json* c = t.at(p, v);
        if (c != nullptr) {
          sum += c->at(metric).get<double>();
          any = true;
        }
      }
      csv += ",";
      csv += any ? fmt_double(sum) : "na";
    }
    csv += "\n";
  }
  return csv;
}

std::string fig_remaining_csv(const ReportTable& t, const std::string& hash, uint64_t seed) {
  std::string csv = "# config_hash=" + hash + " seed=" + std::to_string(seed) + "\n";
  csv += "volume_fraction";
  for (const std::string& p : t.policies) csv += "," + p;
  csv += "\n";
  for (double v : t.volumes) {
    csv += fmt_double(v);
    for (const std::string& p : t.policies) {
      const json* c = t.at(p, v);
      csv += ",";
      if (c != nullptr && !c->at("remaining_ft").is_null())
        csv += fmt_double(c->at("remaining_ft").at("mean").get<double>());
      else
        csv += "na";
    }
    csv += "\n";
  }
  return csv;
}

std::string rounded(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

}  // namespace

void cmd_report(const RunConfig& cfg) {
  const std::string in = out_path(cfg, outfile::kEvalJson);
  if (!fs::exists(in)) {
    std::cout << "nothing to report: '" << cfg.out_dir << "' has no "
              << outfile::kEvalJson << "\n";
    return;
  }
  const json report = read_json_file(in);
  if (report.value("kind", "") != "evaluation-report")
    throw Error("io: '" + in + "' is not an evaluation report");
  const std::string hash = report.at("config_hash").get<std::string>();
  const uint64_t seed = report.at("seed").get<uint64_t>();
  const ReportTable t = build_table(report);

  write_text_file(out_path(cfg, outfile::kFigTet), fig_csv(t, hash, seed, "tet_s", true));
  write_text_file(out_path(cfg, outfile::kFigTit), fig_csv(t, hash, seed, "tit_s", true));
  write_text_file(out_path(cfg, outfile::kFigRemaining), fig_remaining_csv(t, hash, seed));

  const auto total = [&](const std::string& p, const char* metric) {
    double sum = 0.0;
    for (double v : t.volumes) {
      const json* c = t.at(p, v);
      if (c != nullptr) sum += c->at(metric).get<double>();
    }
    return sum;
  };

  std::string s = "work-zone merging policy comparison\n";
  s += "config_hash=" + hash + " seed=" + std::to_string(seed) + "\n\n";

  s += "summed over volumes {";
  for (size_t i = 0; i < t.volumes.size(); ++i)
    s += (i > 0 ? ", " : "") + fmt_double(t.volumes[i]);
  s += "}:\n";
  for (const std::string& p : t.policies) {
    s += "  " + p + ": TET " + rounded(total(p, "tet_s"), 2) + " s, TIT " +
         rounded(total(p, "tit_s"), 2) + " s\n";
  }
  s += "\n";

  const bool have_lstm =
      std::find(t.policies.begin(), t.policies.end(), "lstm") != t.policies.end();
  if (have_lstm) {
    for (const char* metric : {"tet_s", "tit_s"}) {
      const double mine = total("lstm", metric);
      s += metric == std::string("tet_s") ? "TET reduction by lstm:" : "TIT reduction by lstm:";
      for (const std::string& p : t.policies) {
        if (p == "lstm") continue;
        const double base = total(p, metric);
        s += " vs " + p + " ";
        s += base > 0.0 ? rounded((1.0 - mine / base) * 100.0, 2) + "%" : "na";
        s += ";";
      }
      s += "\n";
    }
    s += "\n";
  }

  s += "mean remaining distance before merge (ft):\n";
  for (double v : t.volumes) {
    s += "  volume " + fmt_double(v) + ":";
    for (const std::string& p : t.policies) {
      const json* c = t.at(p, v);
      s += " " + p + "=";
      if (c != nullptr && !c->at("remaining_ft").is_null())
        s += rounded(c->at("remaining_ft").at("mean").get<double>(), 1);
      else
        s += "na";
    }
    s += "\n";
  }
  s += "\nstopped merges / merged trucks:\n";
  for (double v : t.volumes) {
    s += "  volume " + fmt_double(v) + ":";
    for (const std::string& p : t.policies) {
      const json* c = t.at(p, v);
      s += " " + p + "=";
      if (c != nullptr)
        s += std::to_string(c->at("stopped_merge_count").get<uint64_t>()) + "/" +
             std::to_string(c->at("merged_count").get<uint64_t>());
      else
        s += "na";
    }
    s += "\n";
  }
  write_text_file(out_path(cfg, outfile::kSummary), s);
  std::cout << "report: wrote figure tables and summary in '" << cfg.out_dir << "'\n";
}

}  // namespace wzmerge
