#pragma once

#include <deque>
#include <optional>

#include "evplab/events.hpp"
#include "evplab/net.hpp"

namespace evplab {

struct Indications {
  Color mainline = Color::Red;
  Color cross = Color::Red;

  bool operator==(const Indications&) const = default;
};

// Fixed-time two-phase signal controller with preemption. Normal operation
// tracks a background coordination pattern derived from a cycle clock that
// never stops; preempt entry and exit serve yellow and all-red clearances at
// full length and never cut a green below min_green_s.
//
// tick(t, request) is called once per control second, t integral and
// strictly increasing; the returned indications hold for [t, t+1).
class Controller {
 public:
  Controller(int intersection_index, const SignalPlan& plan);

  Indications tick(long t, bool request_active);

  // Spec'd manual release; valid only while dwelling.
  void release_preempt(long t);

  ControlMode mode() const { return mode_; }
  int intersection() const { return index_; }
  Indications current() const { return current_; }
  // background cycle position at time t (runs through preemption)
  long cycle_clock(long t) const;
  double interval_elapsed_s() const { return static_cast<double>(interval_elapsed_); }
  Phase active_phase() const {
    return (current_.cross != Color::Red) ? Phase::Cross : Phase::Mainline;
  }

 private:
  enum class IntervalKind { MainGreen, MainYellow, CrossGreen, CrossYellow, AllRed };
  struct PendingInterval {
    IntervalKind kind;
    long seconds;
  };
  struct BgState {
    IntervalKind kind;
    long elapsed;
    long remaining;
  };
  enum class ExitStage { None, ExtendGreen, Clearance, CrossHold, CrossClear };

  BgState background(long t) const;
  long seconds_to_main_green(long t) const;
  Indications serve(IntervalKind kind);
  void begin_entry(long t);
  void begin_entry_from_serving(IntervalKind kind, long remaining, long green_elapsed);
  void do_release(long t);
  Indications step_pipeline_or_dwell(long t);

  int index_;
  SignalPlan plan_;
  long cycle_, offset_, main_g_, cross_g_, yellow_, all_red_, min_green_;

  ControlMode mode_ = ControlMode::Normal;
  ExitStage exit_stage_ = ExitStage::None;
  std::deque<PendingInterval> pipeline_;
  long main_green_since_ = -1;   // start second of the running mainline green
  long cross_hold_since_ = -1;   // start second of the exit cross green
  long extend_green_until_ = -1;

  Indications current_;
  long interval_elapsed_ = 0;
  bool started_ = false;
};

// Validates controller timing from a recorded event log: yellow intervals
// exactly yellow_s, all-red exactly all_red_s, greens at least min_green_s.
// First and last (possibly truncated) intervals per phase are skipped.
// Returns one message per violation.
std::vector<std::string> check_signal_safety(const EventLog& log, const NetworkSpec& net);

}  // namespace evplab
