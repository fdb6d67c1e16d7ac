#include "wzmerge/sim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace wzmerge {

namespace {

constexpr double kMergeMarginFt = 1.0;

// Lane reassignment is instantaneous, so it is only allowed when the new
// follower could come to rest behind its new leader even if that leader
// braked to a halt. Followers are budgeted comfortable braking, leaders their
// physical maximum.
bool braking_feasible(double follower_v, double follower_b, double leader_v,
                      double leader_b, double gap_ft) {
  if (!(gap_ft >= kMergeMarginFt)) return false;
  const double follower_stop = follower_v * follower_v / (2.0 * follower_b);
  const double leader_stop = leader_v * leader_v / (2.0 * leader_b);
  return gap_ft + leader_stop - follower_stop >= kMergeMarginFt;
}

}  // namespace

void Scenario::validate() const {
  geom.validate();
  if (!(tick_s > 0.0) || tick_s > 1.0) throw Error("config: tick outside (0, 1] s");
  if (demand.cars_per_hour < 0.0 || demand.trucks_per_hour < 0.0)
    throw Error("config: negative demand");
}

void TrajectoryLog::write_csv(std::ostream& os, std::string_view config_hash,
                              uint64_t seed) const {
  os << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  os << kHeader << "\n";
  for (const auto& r : records_) {
    os << r.tick << ',' << r.vehicle_id << ',' << to_string(r.kind) << ','
       << to_string(r.lane) << ',' << fmt_double(r.position_ft) << ','
       << fmt_double(r.speed_fps) << ',' << fmt_double(r.accel_fps2) << '\n';
  }
}

Simulator::Simulator(const Scenario& sc) : sc_(sc), rng_(sc.seed) {
  sc_.validate();
  entry_params_ = IdmParams{};
  if (sc_.demand.total_per_hour() > 0.0) {
    const double mean_headway = 2.0 * kSecondsPerHour / sc_.demand.total_per_hour();
    arrivals_[0].next_sched_s = rng_.exponential(mean_headway);
    arrivals_[1].next_sched_s = rng_.exponential(mean_headway);
  }
}

const Vehicle* Simulator::find_vehicle(uint64_t id) const {
  for (const auto& lane : lanes_)
    for (const auto& v : lane)
      if (v.id == id) return &v;
  return nullptr;
}

NeighborView Simulator::neighbors_in(LaneId lane, const Vehicle& v) const {
  const auto& vec = lanes_[static_cast<size_t>(lane)];
  NeighborView out;
  const auto cmp_pos = [](const Vehicle& a, double p) { return a.position_ft < p; };
  auto lo = std::lower_bound(vec.begin(), vec.end(), v.position_ft, cmp_pos);
  // entries in [lo, hi) share v's position and are neither neighbor
  auto hi = lo;
  while (hi != vec.end() && hi->position_ft == v.position_ft) ++hi;
  if (hi != vec.end()) {
    out.front = &*hi;
    out.gap_front_ft = out.front->rear_ft() - v.position_ft;
  }
  if (lo != vec.begin()) {
    out.rear = &*(lo - 1);
    out.gap_rear_ft = v.rear_ft() - out.rear->position_ft;
  }
  return out;
}

std::vector<uint64_t> Simulator::held_truck_ids() const {
  std::vector<uint64_t> ids;
  for (const auto& v : lanes_[static_cast<size_t>(LaneId::Right)])
    if (v.kind == VehicleKind::LargeTruck && v.merge_held) ids.push_back(v.id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Simulator::step(std::span<const MergeCommand> commands) {
  spawn_arrivals();
  apply_idm();
  integrate();
  check_invariants();
  execute_commands(commands);
  mandatory_car_merges();
  check_invariants();
  remove_exits();
  log_tick();
  ++ticks_done_;
}

void Simulator::spawn_arrivals() {
  const double total = sc_.demand.total_per_hour();
  if (total <= 0.0) return;
  const double mean_headway = 2.0 * kSecondsPerHour / total;  // half the flow per lane
  const double now = (static_cast<double>(ticks_done_) + 1.0) * sc_.tick_s;
  const double p_truck = sc_.demand.truck_share();

  for (size_t li = 0; li < 2; ++li) {
    auto& st = arrivals_[li];
    while (st.next_sched_s <= now) {
      st.pending.push_back(rng_.bernoulli(p_truck) ? VehicleKind::LargeTruck
                                                   : VehicleKind::PassengerCar);
      st.next_sched_s += rng_.exponential(mean_headway);
    }
    if (st.pending.empty()) continue;

    // Entry admits one vehicle per tick and never drops a blocked arrival.
    auto& vec = lanes_[li];
    double gap = kFreeRoadGap;
    if (!vec.empty()) gap = vec.front().rear_ft();
    const double s0 = entry_params_.min_gap_ft;
    if (gap < s0) continue;
    const double limit = sc_.geom.speed_limit_at(0.0);
    double speed = limit;
    if (std::isfinite(gap)) {
      // Headway-feasible and stopping-feasible: the enterer, braking
      // comfortably, must come to rest behind the lane tail even if the tail
      // brakes to a halt at its physical maximum. A headway cap alone admits
      // doomed vehicles when a standing queue reaches back near the entry.
      const Vehicle& tail = vec.front();
      const double tail_stop = tail.speed_fps * tail.speed_fps /
                               (2.0 * vehicle_class(tail.kind).max_decel_fps2);
      const double brake_room = gap - s0 + tail_stop;
      const double brake_cap = std::sqrt(
          std::max(0.0, 2.0 * entry_params_.comfort_decel_fps2 * brake_room));
      speed = std::min({limit, (gap - s0) / entry_params_.headway_s, brake_cap});
    }

    Vehicle v;
    v.id = next_id_++;
    v.kind = st.pending.front();
    v.lane = static_cast<LaneId>(li);
    v.position_ft = 0.0;
    v.speed_fps = speed;
    v.merge_held = (v.lane == LaneId::Right && v.kind == VehicleKind::LargeTruck);
    v.spawned_at_s = now;
    vec.insert(vec.begin(), v);
    st.pending.pop_front();
    ++spawned_;
  }
}

void Simulator::apply_idm() {
  for (size_t li = 0; li < 2; ++li) {
    const auto& vec = lanes_[li];
    auto& acc = accel_scratch_[li];
    acc.resize(vec.size());
    for (size_t i = 0; i < vec.size(); ++i) {
      const Vehicle& v = vec[i];
      const IdmParams p =
          idm_params_for(vehicle_class(v.kind), sc_.geom.speed_limit_at(v.position_ft));
      double a;
      if (i + 1 < vec.size()) {
        const Vehicle& ld = vec[i + 1];
        a = idm_accel(v.speed_fps, ld.rear_ft() - v.position_ft,
                      v.speed_fps - ld.speed_fps, p);
      } else {
        a = idm_accel(v.speed_fps, kFreeRoadGap, 0.0, p);
      }
      if (static_cast<LaneId>(li) == LaneId::Right) {
        const double wall_gap = sc_.geom.closure_point() - v.position_ft;
        a = std::min(a, idm_accel(v.speed_fps, wall_gap, v.speed_fps, p));
      }
      acc[i] = a;
    }
  }
}

void Simulator::integrate() {
  for (size_t li = 0; li < 2; ++li) {
    auto& vec = lanes_[li];
    const auto& acc = accel_scratch_[li];
    for (size_t i = 0; i < vec.size(); ++i) {
      Vehicle& v = vec[i];
      const double vmax = vehicle_class(v.kind).max_speed_fps;
      const double v1 = std::clamp(v.speed_fps + acc[i] * sc_.tick_s, 0.0, vmax);
      v.position_ft += v1 * sc_.tick_s;
      v.accel_fps2 = (v1 - v.speed_fps) / sc_.tick_s;
      v.speed_fps = v1;
    }
  }
}

void Simulator::execute_commands(std::span<const MergeCommand> commands) {
  for (const auto& cmd : commands) {
    const Vehicle* v = find_vehicle(cmd.truck_id);
    if (v == nullptr || v->lane != LaneId::Right || v->kind != VehicleKind::LargeTruck ||
        !v->merge_held || !sc_.geom.in_merge_area(v->position_ft))
      throw Error("sim: merge command for vehicle " + std::to_string(cmd.truck_id) +
                  " that is not a held right-lane truck upstream of the closure");
    try_merge(cmd.truck_id, true);
  }
}

void Simulator::mandatory_car_merges() {
  auto& right = lane_mut(LaneId::Right);
  std::vector<uint64_t> candidates;
  for (auto it = right.rbegin(); it != right.rend(); ++it)
    if (it->kind == VehicleKind::PassengerCar && sc_.geom.in_merge_area(it->position_ft))
      candidates.push_back(it->id);

  const double s0 = entry_params_.min_gap_ft;
  const double T = entry_params_.headway_s;
  for (uint64_t id : candidates) {
    const Vehicle* v = find_vehicle(id);
    if (v == nullptr || v->lane != LaneId::Right) continue;
    const NeighborView nb = target_lane_neighbors(*v);
    if (nb.gap_front_ft < s0 + v->speed_fps * T) continue;
    if (nb.rear != nullptr && nb.gap_rear_ft < s0 + nb.rear->speed_fps * T) continue;
    try_merge(id, false);
  }
}

bool Simulator::try_merge(uint64_t vehicle_id, bool commanded) {
  auto& right = lane_mut(LaneId::Right);
  auto it = std::find_if(right.begin(), right.end(),
                         [&](const Vehicle& v) { return v.id == vehicle_id; });
  if (it == right.end()) throw Error("sim: merge of unknown right-lane vehicle");
  const Vehicle v = *it;

  auto& left = lane_mut(LaneId::Left);
  for (const auto& other : left)
    if (other.position_ft == v.position_ft) return false;

  const NeighborView nb = target_lane_neighbors(v);
  const IdmParams base;
  if (nb.front != nullptr) {
    if (!braking_feasible(v.speed_fps, base.comfort_decel_fps2, nb.front->speed_fps,
                          vehicle_class(nb.front->kind).max_decel_fps2, nb.gap_front_ft))
      return false;
  }
  if (nb.rear != nullptr) {
    if (!braking_feasible(nb.rear->speed_fps, base.comfort_decel_fps2, v.speed_fps,
                          vehicle_class(v.kind).max_decel_fps2, nb.gap_rear_ft))
      return false;
  }

  right.erase(it);
  Vehicle moved = v;
  moved.lane = LaneId::Left;
  moved.merge_held = false;
  const double now = (static_cast<double>(ticks_done_) + 1.0) * sc_.tick_s;
  moved.merged_at_s = now;
  moved.merge_position_ft = moved.position_ft;
  moved.merge_speed_fps = moved.speed_fps;

  auto pos_it = std::upper_bound(
      left.begin(), left.end(), moved.position_ft,
      [](double p, const Vehicle& x) { return p < x.position_ft; });
  left.insert(pos_it, moved);
  merge_events_.push_back({moved.id, moved.kind, commanded, now, moved.position_ft,
                           moved.merge_speed_fps, nb.gap_front_ft, nb.gap_rear_ft});
  return true;
}

void Simulator::remove_exits() {
  for (auto& vec : lanes_) {
    while (!vec.empty() && vec.back().rear_ft() > sc_.geom.network_end()) {
      vec.pop_back();
      ++exited_;
    }
  }
}

void Simulator::check_invariants() const {
  for (const auto& vec : lanes_) {
    for (size_t i = 0; i + 1 < vec.size(); ++i) {
      if (!(vec[i + 1].rear_ft() > vec[i].position_ft))
        throw Error("sim: lane overlap between vehicles " + std::to_string(vec[i].id) +
                    " and " + std::to_string(vec[i + 1].id) + " at tick " +
                    std::to_string(ticks_done_));
    }
  }
  if (spawned_ != exited_ + on_road_count())
    throw Error("sim: vehicle conservation violated at tick " + std::to_string(ticks_done_));
}

void Simulator::log_tick() {
  if (log_ == nullptr) return;
  for (size_t li = 0; li < 2; ++li)
    for (const auto& v : lanes_[li])
      log_->append({ticks_done_, v.id, v.kind, static_cast<LaneId>(li), v.position_ft,
                    v.speed_fps, v.accel_fps2});
}

}  // namespace wzmerge
