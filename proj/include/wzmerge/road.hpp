#pragma once

#include <cstdint>
#include <string>

#include "wzmerge/units.hpp"

namespace wzmerge {

enum class VehicleKind : uint8_t { PassengerCar, LargeTruck };
enum class LaneId : uint8_t { Left, Right };  // Right is the closed lane

const char* to_string(VehicleKind k);
const char* to_string(LaneId l);

struct VehicleClass {
  VehicleKind kind;
  double length_ft;
  double width_ft;
  double height_ft;
  double mass_lb;
  double max_accel_fps2;
  double max_decel_fps2;  // positive magnitude
  double max_speed_fps;
};

const VehicleClass& passenger_car();
const VehicleClass& large_truck();
const VehicleClass& vehicle_class(VehicleKind k);

// Longitudinal layout, single coordinate frame with 0 at network entry and
// positions increasing downstream. The advance warning area starts at 0; the
// closed (Right) lane physically ends where the taper does.
struct WorkZoneGeometry {
  double advance_warning_len_ft = 3900.0;
  double taper_len_ft = 600.0;  // L = W * S with W = 12 ft, S = 50 mph
  double activity_len_ft = 5280.0;
  double termination_len_ft = 900.0;  // 600 ft reopening taper + 300 ft buffer
  double lane_width_ft = 12.0;
  double upstream_limit_fps = mph_to_fps(55.0);
  double workzone_limit_fps = mph_to_fps(50.0);

  double advance_warning_end() const { return advance_warning_len_ft; }
  double taper_end() const { return advance_warning_len_ft + taper_len_ft; }
  double closure_point() const { return taper_end(); }
  double activity_end() const { return taper_end() + activity_len_ft; }
  double network_end() const { return activity_end() + termination_len_ft; }

  // Reduced limit holds through the taper and activity area.
  double speed_limit_at(double position_ft) const {
    if (position_ft >= advance_warning_end() && position_ft < activity_end())
      return workzone_limit_fps;
    return upstream_limit_fps;
  }

  // True upstream of the closure point, i.e. where merges are possible.
  bool in_merge_area(double position_ft) const {
    return position_ft >= 0.0 && position_ft < closure_point();
  }

  void validate() const;
};

WorkZoneGeometry default_geometry();

struct DemandSpec {
  double cars_per_hour = 0.0;
  double trucks_per_hour = 0.0;

  double total_per_hour() const { return cars_per_hour + trucks_per_hour; }
  double truck_share() const {
    const double t = total_per_hour();
    return t > 0.0 ? trucks_per_hour / t : 0.0;
  }
};

inline constexpr double kLaneCapacityPcph = 1400.0;  // per lane, two lanes upstream
inline constexpr double kCarShare = 0.8;
inline constexpr double kTruckPce = 1.5;

// Converts a fraction of the two-lane passenger-car capacity into a mixed
// hourly demand: V = f * 1400 * 2 / (0.8 + 0.2 * 1.5), split 80/20 and rounded
// to whole vehicles per hour.
DemandSpec derive_demand(double volume_fraction);

}  // namespace wzmerge
