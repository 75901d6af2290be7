#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evplab/common.hpp"
#include "evplab/control.hpp"
#include "evplab/events.hpp"
#include "evplab/net.hpp"

namespace evplab {

enum class VehicleClass : std::uint8_t { General = 0, Erv = 1 };

// dynamics constants (feet, seconds)
inline constexpr double kStepS = 0.5;
inline constexpr double kAccelFps2 = 6.0;
inline constexpr double kDecelFps2 = 10.0;
inline constexpr double kJamSpacingFt = 25.0;   // front-to-front at standstill
inline constexpr double kVehicleLengthFt = 18.0;
inline constexpr double kDetectorZoneFt = 6.0;
inline constexpr double kBoxLengthFt = 50.0;
inline constexpr double kCrossApproachFt = 800.0;
inline constexpr double kCrossFreeSpeedMph = 35.0;
inline constexpr double kErvStopDwellS = 2.0;   // full stop at red before caution crossing
inline constexpr double kStoppedSpeedFps = 3.0; // below this a vehicle counts as queued
inline constexpr double kSaturationHeadwayS = 2.0;
inline constexpr double kStartupLostS = 2.0;

struct VehicleState {
  int id = 0;
  VehicleClass cls = VehicleClass::General;
  int lane = 0;              // 0 = mainline, 1 + i = cross approach of intersection i
  double pos = 0.0;          // front bumper, feet along lane axis
  double speed = 0.0;        // fps
  double prev_pos_half = 0.0;  // position one substep ago
  double prev_pos_full = 0.0;  // position two substeps ago
  double entry_time = 0.0;
  int next_signal = 0;       // mainline: index of next stop-bar ahead
  double scratch_new_pos = 0.0;
  // ERV red-stop bookkeeping
  double stopped_since = -1.0;
  bool caution = false;
  double caution_until_pos = 0.0;
};

struct VehicleRecord {
  int id = 0;
  VehicleClass cls = VehicleClass::General;
  int lane = 0;
  double entry_s = 0.0;
  double exit_s = -1.0;  // < 0 while still in the network
};

struct RunOptions {
  bool record_events = true;
  bool record_trajectory = true;
  double post_exit_s = 300.0;
  double max_sim_s = 7200.0;
  // probe mode: stop as soon as the ERV crosses this stop-bar (-1 = full run)
  int stop_after_intersection = -1;
};

// Deterministic single-lane microsimulation. Advances in fixed 0.5 s steps
// under externally supplied signal indications; detector occupancy and ERV
// trajectory are sampled on whole seconds.
class Sim {
 public:
  Sim(const NetworkSpec& net, const DemandSpec& demand, std::uint64_t seed,
      const RunOptions& opts = {});

  // One 0.5 s substep; indications[i] applies to intersection i.
  void step(std::span<const Indications> indications);

  // Places the ERV at the corridor origin. Errors if an ERV is already in
  // the network or the clock is not at entry_time_s; returns false when the
  // origin is blocked by a queue (caller retries next second).
  bool inject_erv(double entry_time_s);

  double clock() const { return clock_; }
  std::uint64_t seed() const { return seed_; }
  // while held, general mainline arrivals wait (ERV entry priority)
  void set_mainline_entry_hold(bool hold) { hold_mainline_entries_ = hold; }
  const NetworkSpec& net() const { return net_; }

  bool erv_in_network() const { return erv_in_network_; }
  bool erv_injected() const { return erv_injected_; }
  bool erv_exited() const { return erv_exited_; }
  double erv_position() const { return erv_pos_; }
  double erv_speed() const { return erv_speed_; }
  double erv_entry_time() const { return erv_entry_s_; }
  double erv_exit_time() const { return erv_exit_s_; }
  // whole second of first crossing of the check-in point, <0 if not yet
  double checkin_cross_s(int intersection) const { return checkin_cross_[intersection]; }
  double stopbar_cross_s(int intersection) const { return stopbar_cross_[intersection]; }

  // stopped (< 3 fps) mainline vehicles within window_ft upstream of the bar
  int estimate_queue(int intersection, double window_ft = 1500.0) const;
  std::uint8_t detector_occupancy(int intersection) const { return detector_now_[intersection]; }

  int vehicles_in_network() const;
  int vehicles_entered() const { return next_vehicle_id_ - 1; }
  const std::vector<VehicleRecord>& vehicle_records() const { return records_; }
  const std::vector<std::array<double, 3>>& erv_trajectory() const { return trajectory_; }
  double next_mainline_arrival_s() const { return arrivals_[0].next_time; }

  EventLog& events() { return events_; }
  const EventLog& events() const { return events_; }
  const RunOptions& options() const { return opts_; }

  // mainline vehicles, front (most downstream) first; tests and policies only
  const std::deque<VehicleState>& mainline() const { return lanes_[0]; }
  const std::deque<VehicleState>& cross_lane(int intersection) const {
    return lanes_[1 + intersection];
  }

  // test hook: place a stopped vehicle directly (keeps lane ordering)
  void place_vehicle_for_test(int lane, double pos, VehicleClass cls = VehicleClass::General);

 private:
  struct ArrivalStream {
    RandomStream rng;
    double rate_vps = 0.0;  // vehicles per second
    double next_time = 0.0;
    bool blocked = false;
  };

  void sample_whole_second();
  void update_lane(int lane, std::span<const Indications> ind);
  void commit_lane(int lane);
  void spawn_arrivals();
  bool lane_entry_clear(int lane) const;
  double entry_speed(int lane, double desired_fps) const;
  void remove_exited(std::span<const Indications> ind);
  bool cross_box_clear(int intersection) const;
  int erv_box_intersection() const;  // intersection whose box the ERV occupies, -1

  NetworkSpec net_;
  DemandSpec demand_;
  RunOptions opts_;
  std::uint64_t seed_ = 0;
  double clock_ = 0.0;
  std::vector<std::deque<VehicleState>> lanes_;  // [0]=mainline, [1+i]=cross i
  std::vector<ArrivalStream> arrivals_;
  std::vector<std::uint8_t> detector_now_;
  std::vector<double> checkin_cross_, stopbar_cross_;
  std::vector<Indications> current_ind_;
  EventLog events_;
  std::vector<VehicleRecord> records_;
  std::vector<std::array<double, 3>> trajectory_;
  int next_vehicle_id_ = 1;
  bool hold_mainline_entries_ = false;
  bool erv_injected_ = false;
  bool erv_in_network_ = false;
  bool erv_exited_ = false;
  double erv_pos_ = -1.0, erv_speed_ = 0.0;
  double erv_entry_s_ = -1.0, erv_exit_s_ = -1.0;
  double mainline_free_fps_, erv_desired_fps_, erv_caution_fps_, cross_free_fps_;
  double corridor_end_ft_;
};

// Per-second state series consumed by the runtime feature builder. Values at
// index t describe the state entering whole second t:
//   occ:     advance-detector occupancy sampled at t
//   color:   mainline indication served during [t-1, t)
//   preempt: 1 iff a call fired at a second < t and was not yet released at t
struct CorridorSeries {
  std::vector<std::vector<std::uint8_t>> occ;
  std::vector<std::vector<std::uint8_t>> color;  // Color enum values
  std::vector<std::vector<std::uint8_t>> preempt;

  void init(std::size_t n) {
    occ.assign(n, {});
    color.assign(n, {});
    preempt.assign(n, {});
  }
  std::size_t seconds() const { return occ.empty() ? 0 : occ[0].size(); }
};

struct CallState {
  bool fired = false;
  long fire_t = -1;
  bool active = false;
  long release_t = -1;
  std::int16_t source = 0;
};

class Strategy;

struct SimView {
  long t = 0;
  const NetworkSpec* net = nullptr;
  const Sim* sim = nullptr;
  const CorridorSeries* series = nullptr;
  std::span<const CallState> calls;

  double erv_pos() const { return sim->erv_position(); }
  double erv_speed() const { return sim->erv_speed(); }
  bool erv_crossed(int i) const { return sim->stopbar_cross_s(i) >= 0; }
  bool at_or_past_checkin(int i) const {
    return erv_pos() >= net->intersections[i].position_ft - net->intersections[i].checkin_setback_ft;
  }
};

// A preemption policy. decide() runs once per control second while the ERV
// is in the network; it appends intersection indices whose preempt call
// should fire this second. Calls latch until the ERV crosses the stop-bar;
// the scenario engine owns latching and release.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual const char* name() const = 0;
  virtual int source_tag() const = 0;
  virtual void reset() {}
  virtual void decide(const SimView& view, std::vector<int>& fire) = 0;
};

struct IntersectionOutcome {
  std::optional<double> call_time_s;
  std::optional<double> checkin_cross_s;
  std::optional<double> stopbar_cross_s;
  double preempt_duration_s = 0.0;
};

struct RunResult {
  double erv_entry_s = -1.0;
  double erv_exit_s = -1.0;
  std::vector<IntersectionOutcome> intersections;
  std::vector<std::array<double, 3>> erv_trajectory;  // (t, position_ft, speed_fps)
  std::vector<VehicleRecord> vehicles;
  EventLog events;
  std::uint64_t seed = 0;

  double erv_travel_time_s() const { return erv_exit_s - erv_entry_s; }
  std::string to_json(const NetworkSpec& net) const;
  std::string trajectory_csv() const;
};

// Simulation world plus controllers, call latches and state series: the unit
// that advances one control second at a time. Copyable, so a warmed-up
// instance can seed many scenario variants.
class ScenarioEngine {
 public:
  ScenarioEngine(const NetworkSpec& net, const DemandSpec& demand, std::uint64_t seed,
                 const RunOptions& opts = {});

  // advance exactly one control second; policy may be null (no preemption)
  void tick_second(Strategy* policy);
  void advance_to(long t_target, Strategy* policy);

  long now() const { return t_; }
  Sim& sim() { return sim_; }
  const Sim& sim() const { return sim_; }
  const std::vector<CallState>& calls() const { return calls_; }
  const CorridorSeries& series() const { return series_; }
  Controller& controller(int i) { return controllers_[i]; }

  void request_erv_injection(long entry_s) { pending_entry_s_ = entry_s; }
  bool erv_injection_pending() const { return pending_entry_s_ >= 0; }

  RunResult finish(std::uint64_t seed) const;

 private:
  Sim sim_;
  std::vector<Controller> controllers_;
  std::vector<Indications> indications_;
  CorridorSeries series_;
  std::vector<CallState> calls_;
  std::vector<int> fire_scratch_;
  long t_ = 0;
  long pending_entry_s_ = -1;
  bool logged_initial_colors_ = false;
};

// Full scenario: warm-up, ERV injection at erv_entry_s, policy consultation
// each second, termination post_exit_s after the ERV leaves (or immediately
// after the probe intersection's stop-bar crossing in probe mode).
RunResult run_scenario(const NetworkSpec& net, const DemandSpec& demand, std::uint64_t seed,
                       double erv_entry_s, Strategy& policy, const RunOptions& opts = {});

// Same, but starting from a copy of an already-warmed engine. A non-negative
// stop_after_intersection overrides the RunOptions probe setting.
RunResult continue_scenario(ScenarioEngine engine, long erv_entry_s, Strategy& policy,
                            int stop_after_intersection = -1);

}  // namespace evplab
