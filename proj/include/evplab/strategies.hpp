#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>

#include "evplab/learn.hpp"
#include "evplab/sim.hpp"

namespace evplab {

enum class StrategyKind : int { NoEvp = 0, CiCo = 1, Dp = 2, Optimal = 3, Ideal = 4, Mlevp = 5 };
const char* to_string(StrategyKind kind);
StrategyKind strategy_kind_from_string(const std::string& name);

// ---------------------------------------------------------------------------

class NoEvpStrategy final : public Strategy {
 public:
  const char* name() const override { return "noevp"; }
  int source_tag() const override { return static_cast<int>(StrategyKind::NoEvp); }
  void decide(const SimView&, std::vector<int>&) override {}
};

// Check-in at the per-intersection setback (1000 ft default); a queue that
// holds the ERV upstream of the check-in point delays the call.
class CiCoStrategy final : public Strategy {
 public:
  const char* name() const override { return "cico"; }
  int source_tag() const override { return static_cast<int>(StrategyKind::CiCo); }
  void decide(const SimView& view, std::vector<int>& fire) override;
};

// Queue-clearance heuristic: call when the ERV's ETA drops under the time to
// flush the standing queue plus a buffer.
class DpStrategy final : public Strategy {
 public:
  explicit DpStrategy(double buffer_s = 5.0) : buffer_s_(buffer_s) {}
  const char* name() const override { return "dp"; }
  int source_tag() const override { return static_cast<int>(StrategyKind::Dp); }
  void decide(const SimView& view, std::vector<int>& fire) override;

  static double eta_s(double distance_ft, double speed_fps);
  static double threshold_s(int queue, double buffer_s);

 private:
  double buffer_s_;
};

// ---------------------------------------------------------------------------
// call schedules (optimal / ideal playback)

struct CallEntry {
  enum class Kind : std::uint8_t { None, Default, At };
  Kind kind = Kind::Default;
  double t = 0.0;

  static CallEntry none() { return {Kind::None, 0.0}; }
  static CallEntry standard() { return {Kind::Default, 0.0}; }
  static CallEntry at(double t) { return {Kind::At, t}; }
  bool operator==(const CallEntry&) const = default;
};

struct CallSchedule {
  std::vector<CallEntry> entries;  // by intersection index

  std::string to_json(const NetworkSpec& net) const;
  static CallSchedule from_json(const std::string& text, const NetworkSpec& net);
};

class ScheduleStrategy final : public Strategy {
 public:
  ScheduleStrategy(CallSchedule schedule, StrategyKind tag)
      : schedule_(std::move(schedule)), tag_(tag) {}
  const char* name() const override { return to_string(tag_); }
  int source_tag() const override { return static_cast<int>(tag_); }
  void decide(const SimView& view, std::vector<int>& fire) override;

 private:
  CallSchedule schedule_;
  StrategyKind tag_;
};

// ---------------------------------------------------------------------------
// MLEVP runtime policy

// Per-second EVPNS prediction per intersection; fires when the prediction
// exceeds the model cutoff, with the check-in crossing as a guaranteed
// floor. The entry intersection (index 0) runs the floor rule only.
class MlevpStrategy final : public Strategy {
 public:
  MlevpStrategy(const NetworkSpec& net, const CorridorPolicy* policy);
  const char* name() const override { return "mlevp"; }
  int source_tag() const override { return static_cast<int>(StrategyKind::Mlevp); }
  void reset() override;
  void decide(const SimView& view, std::vector<int>& fire) override;

  // wall-clock seconds spent inside model inference per decide() call
  const std::vector<double>& inference_seconds() const { return inference_s_; }

 private:
  const CorridorPolicy* policy_;
  std::vector<const TrainedModel*> model_by_index_;  // null for the entry intersection
  std::vector<double> feature_scratch_;
  std::vector<double> inference_s_;
};

// ---------------------------------------------------------------------------
// warm-state cache and timing searches

// Caches engines advanced to the end of warm-up, one per (seed, recording)
// pair; probe runs copy a cached engine instead of re-simulating warm-up.
class WarmupPool {
 public:
  WarmupPool(const NetworkSpec& net, const DemandSpec& demand)
      : net_(net), demand_(demand) {}

  ScenarioEngine warmed_copy(std::uint64_t seed, bool record);
  const NetworkSpec& net() const { return net_; }
  const DemandSpec& demand() const { return demand_; }

 private:
  NetworkSpec net_;
  DemandSpec demand_;
  std::map<std::pair<std::uint64_t, bool>, std::unique_ptr<ScenarioEngine>> cache_;
  std::mutex mu_;
};

struct IntersectionSearchInfo {
  double objective_min = 0.0;      // best arrival at the stop-bar over the range
  double default_objective = 0.0;  // arrival under the default check-in call
  long default_call_s = -1;        // second the default call fires
  int probes = 0;
  bool fallback_sweep = false;     // witnessed non-monotone objective
};

struct ScheduleSearchResult {
  CallSchedule schedule;
  std::vector<IntersectionSearchInfo> info;
};

// Upstream-to-downstream per-intersection search for the latest call time
// whose ERV stop-bar arrival is within margin_s of the strict minimum
// (margin 0 = strict optimum). Earlier intersections' found calls stay
// fixed; a witnessed monotonicity violation falls back to an exhaustive
// 1 s sweep with the same contract.
ScheduleSearchResult search_call_schedule(WarmupPool& pool, std::uint64_t seed, long erv_entry_s,
                                          double margin_s);

CallSchedule optimal_call_search(const NetworkSpec& net, const DemandSpec& demand,
                                 std::uint64_t seed, long erv_entry_s,
                                 ScheduleSearchResult* detail = nullptr);
CallSchedule ideal_call_search(const NetworkSpec& net, const DemandSpec& demand,
                               std::uint64_t seed, long erv_entry_s, double margin_s = 2.0,
                               ScheduleSearchResult* detail = nullptr);

// test oracle: full 1 s sweep over the call-time range of one intersection,
// holding `prefix` fixed; returns the latest entry within margin of the
// strict minimum (identical contract to the binary search)
CallEntry sweep_call_search(WarmupPool& pool, std::uint64_t seed, long erv_entry_s,
                            const CallSchedule& prefix, int intersection, double margin_s);

// ground-truth queue read used by the DP policy
int estimate_queue(const Sim& sim, int intersection);

}  // namespace evplab
