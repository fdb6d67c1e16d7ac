#include "wzmerge/road.hpp"

#include <cmath>

namespace wzmerge {

const char* to_string(VehicleKind k) {
  return k == VehicleKind::PassengerCar ? "car" : "truck";
}

const char* to_string(LaneId l) { return l == LaneId::Left ? "left" : "right"; }

const VehicleClass& passenger_car() {
  static const VehicleClass c{
      VehicleKind::PassengerCar,
      16.4, 5.9, 4.92, 3360.9,
      8.53, 14.76, mph_to_fps(124.27),
  };
  return c;
}

const VehicleClass& large_truck() {
  static const VehicleClass c{
      VehicleKind::LargeTruck,
      54.13, 8.37, 13.12, 28660.1,
      3.28, 13.12, mph_to_fps(80.78),
  };
  return c;
}

const VehicleClass& vehicle_class(VehicleKind k) {
  return k == VehicleKind::PassengerCar ? passenger_car() : large_truck();
}

void WorkZoneGeometry::validate() const {
  if (!(advance_warning_len_ft > 0.0 && taper_len_ft > 0.0 && activity_len_ft > 0.0 &&
        termination_len_ft > 0.0 && lane_width_ft > 0.0))
    throw Error("config: geometry lengths must be positive");
  if (!(upstream_limit_fps > 0.0 && workzone_limit_fps > 0.0))
    throw Error("config: speed limits must be positive");
  if (!(0.0 < advance_warning_end() && advance_warning_end() < taper_end() &&
        taper_end() < activity_end() && activity_end() < network_end()))
    throw Error("config: geometry anchors must be strictly increasing");
}

WorkZoneGeometry default_geometry() {
  WorkZoneGeometry g;
  g.validate();
  return g;
}

DemandSpec derive_demand(double volume_fraction) {
  if (!(volume_fraction > 0.0) || volume_fraction > 1.0)
    throw Error("config: volume fraction outside (0, 1]");
  const double pc_capacity = 2.0 * kLaneCapacityPcph;
  const double mixed = volume_fraction * pc_capacity /
                       (kCarShare + (1.0 - kCarShare) * kTruckPce);
  DemandSpec d;
  d.cars_per_hour = std::round(kCarShare * mixed);
  d.trucks_per_hour = std::round((1.0 - kCarShare) * mixed);
  return d;
}

}  // namespace wzmerge
