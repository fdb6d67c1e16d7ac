#pragma once

#include <deque>
#include <iosfwd>
#include <span>
#include <vector>

#include "wzmerge/idm.hpp"
#include "wzmerge/vehicle.hpp"

namespace wzmerge {

struct Scenario {
  WorkZoneGeometry geom;
  DemandSpec demand;
  double tick_s = 0.1;
  uint64_t seed = 1;

  void validate() const;
};

struct MergeCommand {
  uint64_t truck_id = 0;
};

struct NeighborView {
  const Vehicle* front = nullptr;
  const Vehicle* rear = nullptr;
  // Bumper gaps; negative values mean the bodies overlap longitudinally
  // (side by side in different lanes). Absent neighbors read as free road.
  double gap_front_ft = kFreeRoadGap;
  double gap_rear_ft = kFreeRoadGap;
};

struct TickRecord {
  uint32_t tick = 0;
  uint64_t vehicle_id = 0;
  VehicleKind kind = VehicleKind::PassengerCar;
  LaneId lane = LaneId::Right;
  double position_ft = 0.0;
  double speed_fps = 0.0;
  double accel_fps2 = 0.0;
};

class TrajectoryLog {
 public:
  static constexpr const char* kHeader =
      "tick,vehicle_id,class,lane,position_ft,speed_fps,accel_fps2";

  void append(const TickRecord& r) { records_.push_back(r); }
  const std::vector<TickRecord>& records() const { return records_; }
  void write_csv(std::ostream& os, std::string_view config_hash, uint64_t seed) const;

 private:
  std::vector<TickRecord> records_;
};

struct MergeEvent {
  uint64_t vehicle_id = 0;
  VehicleKind kind = VehicleKind::PassengerCar;
  bool commanded = false;  // true for policy-driven truck merges
  double time_s = 0.0;
  double position_ft = 0.0;
  double speed_fps = 0.0;
  // Target-lane bumper gaps the vehicle merged into, measured just before the
  // lane change. Infinite when that neighbor was absent.
  double gap_front_ft = kFreeRoadGap;
  double gap_rear_ft = kFreeRoadGap;
};

// Two-lane work-zone microsimulation. Per tick, in order: arrivals, leader
// resolution, IDM accelerations (the Right lane additionally sees a standing
// virtual leader at the closure point), semi-implicit Euler integration,
// commanded truck merges, mandatory passenger-car merges, exits, logging.
// Right-lane trucks spawn merge-held and change lanes only on command.
class Simulator {
 public:
  explicit Simulator(const Scenario& sc);

  void step(std::span<const MergeCommand> commands = {});

  const Scenario& scenario() const { return sc_; }
  double tick_s() const { return sc_.tick_s; }
  uint32_t ticks_done() const { return ticks_done_; }
  double clock_s() const { return static_cast<double>(ticks_done_) * sc_.tick_s; }

  // Ascending by position; index n+1 is the leader of index n.
  const std::vector<Vehicle>& lane_vehicles(LaneId lane) const {
    return lanes_[static_cast<size_t>(lane)];
  }
  const Vehicle* find_vehicle(uint64_t id) const;

  // Nearest vehicles strictly ahead of / strictly behind v's front bumper in
  // the given lane. v itself and vehicles at exactly equal position are
  // neither neighbor.
  NeighborView neighbors_in(LaneId lane, const Vehicle& v) const;
  NeighborView target_lane_neighbors(const Vehicle& v) const {
    return neighbors_in(LaneId::Left, v);
  }

  std::vector<uint64_t> held_truck_ids() const;  // ascending id

  uint64_t spawned_count() const { return spawned_; }
  uint64_t exited_count() const { return exited_; }
  size_t on_road_count() const { return lanes_[0].size() + lanes_[1].size(); }
  const std::vector<MergeEvent>& merge_events() const { return merge_events_; }

  void set_trajectory_log(TrajectoryLog* log) { log_ = log; }

 private:
  struct ArrivalState {
    double next_sched_s = 0.0;
    std::deque<VehicleKind> pending;
  };

  std::vector<Vehicle>& lane_mut(LaneId lane) { return lanes_[static_cast<size_t>(lane)]; }
  void spawn_arrivals();
  void apply_idm();
  void integrate();
  void execute_commands(std::span<const MergeCommand> commands);
  void mandatory_car_merges();
  bool try_merge(uint64_t vehicle_id, bool commanded);
  void remove_exits();
  void check_invariants() const;
  void log_tick();

  Scenario sc_;
  IdmParams entry_params_;  // shared s0 / T used by entry and mandatory-merge rules
  std::vector<Vehicle> lanes_[2];
  std::vector<double> accel_scratch_[2];
  ArrivalState arrivals_[2];
  Rng rng_;
  uint64_t next_id_ = 1;
  uint32_t ticks_done_ = 0;
  uint64_t spawned_ = 0;
  uint64_t exited_ = 0;
  std::vector<MergeEvent> merge_events_;
  TrajectoryLog* log_ = nullptr;
};

}  // namespace wzmerge
