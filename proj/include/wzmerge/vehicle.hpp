#pragma once

#include <cstdint>
#include <optional>

#include "wzmerge/road.hpp"

namespace wzmerge {

// position_ft is the front bumper; the body extends length_ft upstream.
struct Vehicle {
  uint64_t id = 0;
  VehicleKind kind = VehicleKind::PassengerCar;
  LaneId lane = LaneId::Right;
  double position_ft = 0.0;
  double speed_fps = 0.0;
  double accel_fps2 = 0.0;  // effective over the last tick
  bool merge_held = false;  // controlled truck awaiting a merge command
  double spawned_at_s = 0.0;
  std::optional<double> merged_at_s;
  double merge_position_ft = 0.0;
  double merge_speed_fps = 0.0;

  double length_ft() const { return vehicle_class(kind).length_ft; }
  double rear_ft() const { return position_ft - length_ft(); }
};

}  // namespace wzmerge
