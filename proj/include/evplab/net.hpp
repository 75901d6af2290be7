#pragma once

#include <string>
#include <vector>

namespace evplab {

struct SignalPlan {
  double cycle_s = 160.0;
  double offset_s = 0.0;
  double mainline_green_s = 96.0;
  double cross_green_s = 52.0;
  double yellow_s = 4.0;
  double all_red_s = 2.0;
  double min_green_s = 10.0;
};

struct IntersectionSpec {
  std::string id;
  double position_ft = 0.0;                  // stop-bar, feet from corridor origin
  double advance_detector_setback_ft = 350.0;
  double checkin_setback_ft = 1000.0;
  SignalPlan signal;
  double cross_demand_vph = 400.0;

  double detector_position_ft() const { return position_ft - advance_detector_setback_ft; }
  double checkin_position_ft() const { return position_ft - checkin_setback_ft; }
};

struct DemandSpec {
  double mainline_vph = 900.0;
  double cross_vph = 400.0;   // per cross approach, default for intersections
  double warmup_s = 900.0;
};

struct NetworkSpec {
  std::vector<IntersectionSpec> intersections;
  double entry_link_length_ft = 1800.0;   // corridor origin to first stop-bar
  double exit_link_length_ft = 500.0;     // last stop-bar to corridor end
  double mainline_free_speed_mph = 45.0;
  double erv_desired_speed_mph = 50.0;
  double erv_caution_speed_mph = 20.0;
  DemandSpec demand;

  std::size_t size() const { return intersections.size(); }
  double corridor_length_ft() const {
    return intersections.empty() ? entry_link_length_ft + exit_link_length_ft
                                 : intersections.back().position_ft + exit_link_length_ft;
  }
  double corridor_length_miles() const { return corridor_length_ft() / 5280.0; }
  // index of intersection by id, -1 if unknown
  int index_of(const std::string& id) const;
};

// Synthetic 8-intersection corridor: 160 s cycle two-phase plans, 350 ft
// advance detectors, 1000 ft check-in, offsets timed for 40 mph progression.
NetworkSpec default_testbed();

// Parse + validate a JSON network document (see docs/formats.md).
// Throws ConfigError naming the offending key or rule.
NetworkSpec load_network(const std::string& config_text);

std::string serialize_network(const NetworkSpec& net);

// Invariant check; one human-readable entry per violated rule, empty if valid.
std::vector<std::string> validate(const NetworkSpec& net);

}  // namespace evplab
