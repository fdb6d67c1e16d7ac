#include "wzmerge/policies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace wzmerge {

namespace {

using nlohmann::json;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Lstm: return "lstm";
    case PolicyKind::Bayes: return "bayes";
    case PolicyKind::GapP50: return "p50";
    case PolicyKind::GapP85: return "p85";
    case PolicyKind::KinematicGap: return "kinematic";
  }
  throw Error("policy: unknown policy kind");
}

PolicyKind policy_from_string(std::string_view s) {
  if (s == "lstm") return PolicyKind::Lstm;
  if (s == "bayes") return PolicyKind::Bayes;
  if (s == "p50") return PolicyKind::GapP50;
  if (s == "p85") return PolicyKind::GapP85;
  if (s == "kinematic") return PolicyKind::KinematicGap;
  throw Error("policy: unknown policy name '" + std::string(s) + "'");
}

GapThresholds fit_gap_percentiles(std::span<const GapObservation> obs) {
  std::vector<double> gaps[2];
  for (const GapObservation& o : obs)
    gaps[static_cast<size_t>(o.direction)].push_back(o.gap_ft);

  for (Direction d : {Direction::Forward, Direction::Rear}) {
    const size_t n = gaps[static_cast<size_t>(d)].size();
    if (n < kMinGapObservations)
      throw Error("policy: need at least " + std::to_string(kMinGapObservations) + " " +
                  std::string(to_string(d)) + " gap observations, have " + std::to_string(n));
  }

  for (auto& g : gaps) std::sort(g.begin(), g.end());
  GapThresholds t;
  t.forward_p50 = percentile_sorted(gaps[0], 0.50);
  t.forward_p85 = percentile_sorted(gaps[0], 0.85);
  t.rear_p50 = percentile_sorted(gaps[1], 0.50);
  t.rear_p85 = percentile_sorted(gaps[1], 0.85);
  return t;
}

size_t BayesDirectionModel::bin_index(double gap_ft) const {
  if (like_conflict.empty()) throw Error("policy: empty likelihood histogram");
  const double raw = std::floor((gap_ft - gap_origin_ft) / bin_width_ft);
  if (!(raw > 0.0)) return 0;  // also catches NaN
  const double cap = static_cast<double>(like_conflict.size() - 1);
  return raw >= cap ? like_conflict.size() - 1 : static_cast<size_t>(raw);
}

double BayesDirectionModel::prior(bool neighbor_is_truck) const {
  return sigmoid(prior_b0 + (neighbor_is_truck ? prior_b1 : 0.0));
}

double BayesDirectionModel::posterior(double gap_ft, bool neighbor_is_truck) const {
  const double p = prior(neighbor_is_truck);
  const size_t b = bin_index(gap_ft);
  const double num = like_conflict[b] * p;
  return num / (num + like_clear[b] * (1.0 - p));
}

namespace {

// Two-parameter logistic MLE on a binary predictor. Counts: n[x] observations
// with indicator x, k[x] of them labeled positive.
void fit_logistic_prior(const uint64_t n[2], const uint64_t k[2], double& b0, double& b1) {
  const bool identifiable = n[0] > 0 && n[1] > 0;
  const bool interior = identifiable && k[0] > 0 && k[0] < n[0] && k[1] > 0 && k[1] < n[1];

  if (!interior) {
    // Haldane correction keeps the group logits finite under separation; a
    // missing group pins the slope at zero.
    if (!identifiable) {
      const uint64_t nt = n[0] + n[1], kt = k[0] + k[1];
      b0 = logit((static_cast<double>(kt) + 0.5) / (static_cast<double>(nt) + 1.0));
      b1 = 0.0;
      return;
    }
    const double p0 = (static_cast<double>(k[0]) + 0.5) / (static_cast<double>(n[0]) + 1.0);
    const double p1 = (static_cast<double>(k[1]) + 0.5) / (static_cast<double>(n[1]) + 1.0);
    b0 = logit(p0);
    b1 = logit(p1) - logit(p0);
    return;
  }

  b0 = 0.0;
  b1 = 0.0;
  for (int iter = 0; iter < 50; ++iter) {
    double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
    for (int x = 0; x < 2; ++x) {
      const double mu = sigmoid(b0 + (x == 1 ? b1 : 0.0));
      const double nn = static_cast<double>(n[x]);
      const double kk = static_cast<double>(k[x]);
      const double w = nn * mu * (1.0 - mu);
      g0 += kk - nn * mu;
      h00 += w;
      if (x == 1) {
        g1 += kk - nn * mu;
        h01 += w;
        h11 += w;
      }
    }
    const double det = h00 * h11 - h01 * h01;
    if (std::abs(det) < 1e-14) break;
    const double d0 = (h11 * g0 - h01 * g1) / det;
    const double d1 = (h00 * g1 - h01 * g0) / det;
    b0 += d0;
    b1 += d1;
    if (std::max(std::abs(g0), std::abs(g1)) < 1e-10) break;
  }
}

BayesDirectionModel fit_bayes_direction(std::span<const GapObservation> obs, Direction d) {
  std::vector<const GapObservation*> mine;
  for (const GapObservation& o : obs)
    if (o.direction == d) mine.push_back(&o);
  if (mine.empty())
    throw Error("policy: no gap observations for " + std::string(to_string(d)) +
                " direction");

  uint64_t n[2] = {0, 0}, k[2] = {0, 0};
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  uint64_t pos = 0;
  for (const GapObservation* o : mine) {
    const int x = o->neighbor_is_truck ? 1 : 0;
    ++n[x];
    if (o->label == 1) {
      ++k[x];
      ++pos;
    }
    lo = std::min(lo, o->gap_ft);
    hi = std::max(hi, o->gap_ft);
  }
  if (pos == 0 || pos == mine.size())
    throw Error("policy: single-class gap data for " + std::string(to_string(d)) +
                " direction");

  BayesDirectionModel m;
  m.bin_width_ft = kBayesBinWidthFt;
  m.gap_origin_ft = lo;
  const size_t nbins =
      1 + static_cast<size_t>(std::floor((hi - lo) / m.bin_width_ft));
  std::vector<uint64_t> count_c(nbins, 0), count_n(nbins, 0);
  m.like_conflict.assign(nbins, 0.0);
  m.like_clear.assign(nbins, 0.0);

  for (const GapObservation* o : mine) {
    const size_t b = std::min(
        static_cast<size_t>(std::max(0.0, std::floor((o->gap_ft - lo) / m.bin_width_ft))),
        nbins - 1);
    (o->label == 1 ? count_c : count_n)[b] += 1;
  }
  const double denom_c = static_cast<double>(pos + nbins);
  const double denom_n = static_cast<double>(mine.size() - pos + nbins);
  for (size_t b = 0; b < nbins; ++b) {
    m.like_conflict[b] = (static_cast<double>(count_c[b]) + 1.0) / denom_c;
    m.like_clear[b] = (static_cast<double>(count_n[b]) + 1.0) / denom_n;
  }

  fit_logistic_prior(n, k, m.prior_b0, m.prior_b1);
  return m;
}

}  // namespace

BayesModel fit_bayes(std::span<const GapObservation> obs) {
  BayesModel m;
  m.forward = fit_bayes_direction(obs, Direction::Forward);
  m.rear = fit_bayes_direction(obs, Direction::Rear);
  return m;
}

MergeDecision decide_lstm(const TruckContext& ctx, const ModelArtifact& forward_model,
                          const ModelArtifact& rear_model) {
  // A side with no vehicle needs no prediction; a side with a vehicle but no
  // complete history keeps the truck held rather than guessing.
  if (ctx.front_present) {
    if (!ctx.window_front.has_value()) return {};
    if (predict(forward_model, *ctx.window_front).conflicting) return {};
  }
  if (ctx.rear_present) {
    if (!ctx.window_rear.has_value()) return {};
    if (predict(rear_model, *ctx.window_rear).conflicting) return {};
  }
  return {true, MergeRationale::LstmClear};
}

MergeDecision decide_gap(const TruckContext& ctx, const GapThresholds& thr,
                         GapPercentile percentile) {
  const bool p85 = percentile == GapPercentile::P85;
  const double tf = p85 ? thr.forward_p85 : thr.forward_p50;
  const double tr = p85 ? thr.rear_p85 : thr.rear_p50;
  if (ctx.gap_front_ft >= tf && ctx.gap_rear_ft >= tr)
    return {true, MergeRationale::GapAccepted};
  return {};
}

MergeDecision decide_bayes(const TruckContext& ctx, const BayesModel& model) {
  double worst = 0.0;  // absent side contributes posterior 0
  if (ctx.front_present)
    worst = std::max(worst, model.forward.posterior(ctx.gap_front_ft, ctx.front_is_truck));
  if (ctx.rear_present)
    worst = std::max(worst, model.rear.posterior(ctx.gap_rear_ft, ctx.rear_is_truck));
  if (worst < 0.5) return {true, MergeRationale::BayesLowRisk};
  return {};
}

MergeDecision decide_kinematic(const TruckContext& ctx) {
  const IdmParams ref{};
  const double need_front = ref.min_gap_ft + ctx.truck_speed_fps * ref.headway_s;
  const double need_rear = ref.min_gap_ft + ctx.rear_speed_fps * ref.headway_s;
  if (ctx.gap_front_ft >= need_front && ctx.gap_rear_ft >= need_rear)
    return {true, MergeRationale::GapAccepted};
  return {};
}

namespace {

void write_json_file(const json& j, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io: cannot open '" + path + "' for writing");
  os << j.dump(2) << "\n";
  if (!os) throw Error("io: write failed for '" + path + "'");
}

json read_json_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("io: cannot open '" + path + "'");
  try {
    json j;
    is >> j;
    return j;
  } catch (const json::exception& e) {
    throw Error("io: unparseable JSON in '" + path + "': " + e.what());
  }
}

}  // namespace

void save_thresholds(const GapThresholds& t, const std::string& path,
                     std::string_view config_hash, uint64_t seed) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "gap-thresholds";
  j["config_hash"] = std::string(config_hash);
  j["seed"] = seed;
  j["forward_p50"] = t.forward_p50;
  j["forward_p85"] = t.forward_p85;
  j["rear_p50"] = t.rear_p50;
  j["rear_p85"] = t.rear_p85;
  write_json_file(j, path);
}

GapThresholds load_thresholds(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("format_version", -1) != 1)
    throw Error("policy: unsupported format_version in '" + path + "'");
  GapThresholds t;
  t.forward_p50 = j.at("forward_p50").get<double>();
  t.forward_p85 = j.at("forward_p85").get<double>();
  t.rear_p50 = j.at("rear_p50").get<double>();
  t.rear_p85 = j.at("rear_p85").get<double>();
  if (t.forward_p85 < t.forward_p50 || t.rear_p85 < t.rear_p50 || t.forward_p50 < 0.0 ||
      t.rear_p50 < 0.0)
    throw Error("policy: threshold ordering violated in '" + path + "'");
  return t;
}

namespace {

json bayes_direction_to_json(const BayesDirectionModel& m) {
  return json{{"prior_b0", m.prior_b0},       {"prior_b1", m.prior_b1},
              {"bin_width_ft", m.bin_width_ft}, {"gap_origin_ft", m.gap_origin_ft},
              {"like_conflict", m.like_conflict}, {"like_clear", m.like_clear}};
}

BayesDirectionModel bayes_direction_from_json(const json& j, const std::string& path) {
  BayesDirectionModel m;
  m.prior_b0 = j.at("prior_b0").get<double>();
  m.prior_b1 = j.at("prior_b1").get<double>();
  m.bin_width_ft = j.at("bin_width_ft").get<double>();
  m.gap_origin_ft = j.at("gap_origin_ft").get<double>();
  m.like_conflict = j.at("like_conflict").get<std::vector<double>>();
  m.like_clear = j.at("like_clear").get<std::vector<double>>();
  if (m.like_conflict.empty() || m.like_conflict.size() != m.like_clear.size())
    throw Error("policy: likelihood histogram size mismatch in '" + path + "'");
  if (!(m.bin_width_ft > 0.0))
    throw Error("policy: non-positive bin width in '" + path + "'");
  for (const auto* h : {&m.like_conflict, &m.like_clear}) {
    double sum = 0.0;
    for (double v : *h) {
      if (v <= 0.0) throw Error("policy: non-positive likelihood bin in '" + path + "'");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw Error("policy: likelihood histogram not normalized in '" + path + "'");
  }
  return m;
}

}  // namespace

void save_bayes(const BayesModel& m, const std::string& path, std::string_view config_hash,
                uint64_t seed) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "bayes-gap-model";
  j["config_hash"] = std::string(config_hash);
  j["seed"] = seed;
  j["forward"] = bayes_direction_to_json(m.forward);
  j["rear"] = bayes_direction_to_json(m.rear);
  write_json_file(j, path);
}

BayesModel load_bayes(const std::string& path) {
  const json j = read_json_file(path);
  if (j.value("format_version", -1) != 1)
    throw Error("policy: unsupported format_version in '" + path + "'");
  BayesModel m;
  m.forward = bayes_direction_from_json(j.at("forward"), path);
  m.rear = bayes_direction_from_json(j.at("rear"), path);
  return m;
}

PolicyEngine::PolicyEngine(PolicyKind kind, const PolicyModels& models, double tick_s)
    : kind_(kind), models_(models) {
  if (!(tick_s > 0.0)) throw Error("policy: non-positive tick");
  switch (kind_) {
    case PolicyKind::Lstm:
      if (models_.forward_lstm == nullptr || models_.rear_lstm == nullptr)
        throw Error("policy: lstm policy requires both direction models");
      break;
    case PolicyKind::GapP50:
    case PolicyKind::GapP85:
      if (models_.thresholds == nullptr)
        throw Error("policy: gap policy requires fitted thresholds");
      break;
    case PolicyKind::Bayes:
      if (models_.bayes == nullptr) throw Error("policy: bayes policy requires a fitted model");
      break;
    case PolicyKind::KinematicGap:
      break;
  }
  // The Bayes baseline reassesses once per second; everything else every tick.
  decision_period_ticks_ =
      kind_ == PolicyKind::Bayes
          ? std::max<size_t>(1, static_cast<size_t>(std::llround(1.0 / tick_s)))
          : 1;
}

TruckContext PolicyEngine::make_context(const Simulator& sim, const Vehicle& truck) const {
  TruckContext ctx;
  ctx.truck_id = truck.id;
  ctx.truck_speed_fps = truck.speed_fps;
  const NeighborView nv = sim.target_lane_neighbors(truck);
  if (nv.front != nullptr) {
    ctx.front_present = true;
    ctx.front_is_truck = nv.front->kind == VehicleKind::LargeTruck;
    ctx.gap_front_ft = nv.gap_front_ft;
    if (kind_ == PolicyKind::Lstm)
      ctx.window_front = tracker_.window(truck.id, Direction::Forward);
  }
  if (nv.rear != nullptr) {
    ctx.rear_present = true;
    ctx.rear_is_truck = nv.rear->kind == VehicleKind::LargeTruck;
    ctx.gap_rear_ft = nv.gap_rear_ft;
    ctx.rear_speed_fps = nv.rear->speed_fps;
    if (kind_ == PolicyKind::Lstm)
      ctx.window_rear = tracker_.window(truck.id, Direction::Rear);
  }
  return ctx;
}

std::vector<MergeCommand> PolicyEngine::decide(const Simulator& sim) {
  const std::vector<uint64_t> held = sim.held_truck_ids();

  if (kind_ == PolicyKind::Lstm) {
    for (uint64_t id : tracked_)
      if (!std::binary_search(held.begin(), held.end(), id)) tracker_.drop_truck(id);
    const uint32_t tick = sim.ticks_done();
    for (uint64_t id : held) {
      const Vehicle* v = sim.find_vehicle(id);
      tracker_.feed(id, Direction::Forward, tick,
                    make_pair_obs(sim, *v, Direction::Forward));
      tracker_.feed(id, Direction::Rear, tick, make_pair_obs(sim, *v, Direction::Rear));
    }
    tracked_ = held;
  }

  std::vector<MergeCommand> commands;
  if (sim.ticks_done() % decision_period_ticks_ != 0) return commands;

  for (uint64_t id : held) {
    const Vehicle* v = sim.find_vehicle(id);
    const TruckContext ctx = make_context(sim, *v);
    MergeDecision d;
    switch (kind_) {
      case PolicyKind::Lstm:
        d = decide_lstm(ctx, *models_.forward_lstm, *models_.rear_lstm);
        break;
      case PolicyKind::Bayes:
        d = decide_bayes(ctx, *models_.bayes);
        break;
      case PolicyKind::GapP50:
        d = decide_gap(ctx, *models_.thresholds, GapPercentile::P50);
        break;
      case PolicyKind::GapP85:
        d = decide_gap(ctx, *models_.thresholds, GapPercentile::P85);
        break;
      case PolicyKind::KinematicGap:
        d = decide_kinematic(ctx);
        break;
    }
    if (d.merge_now) commands.push_back({id});
  }
  return commands;
}

}  // namespace wzmerge
