#pragma once

#include "evplab/campaign.hpp"

namespace evplab {

struct Metrics {
  double erv_travel_time_s = 0.0;
  double erv_avg_speed_mph = 0.0;
  std::vector<double> preempt_duration_s;  // per intersection
  double aggregate_preempt_s = 0.0;
  double mainline_tt_mean_s = 0.0;
  double mainline_tt_median_s = 0.0;
  int mainline_count = 0;
  double sidestreet_delay_mean_s = 0.0;
  int sidestreet_count = 0;
};

// Pure function of a completed run. Throws DataError when the ERV never
// finished the corridor.
Metrics compute_metrics(const RunResult& run, const NetworkSpec& net);

inline constexpr const char* kComparisonStrategies[6] = {"noevp", "cico",  "dp",
                                                         "optimal", "ideal", "mlevp"};

struct ComparisonReport {
  std::vector<std::string> strategies;          // fixed order
  std::vector<int> scenario_ids;
  std::vector<std::uint64_t> scenario_seeds;
  std::vector<long> scenario_entries;
  std::vector<std::vector<Metrics>> metrics;    // [strategy][scenario]
};

// Runs every (test scenario, strategy) pair with identical seeds.
ComparisonReport compare_strategies(const NetworkSpec& net, const DemandSpec& demand,
                                    std::span<const ScenarioSolution> test_scenarios,
                                    const CorridorPolicy& policy, unsigned jobs);

struct DistSummary {
  double mean = 0, median = 0, p25 = 0, p75 = 0, min = 0, max = 0;
};
DistSummary summarize(std::vector<double> values);

// metrics.csv, summary.csv (with the published reference speeds row),
// pairwise deltas and one SVG box plot per metric; emission is byte-stable
// for identical reports.
void render_report(const ComparisonReport& report, const NetworkSpec& net,
                   const std::string& out_dir);

struct BenchResult {
  double factor = 0.0;        // simulated seconds per wall-clock second, MLEVP active
  double factor_noevp = 0.0;
  double inference_ms_p50 = 0.0;
  double inference_ms_p99 = 0.0;
  std::string to_json() const;
};

// Real-time factor over a 300 s simulated window that includes the ERV
// traversal with live MLEVP inference.
BenchResult bench_realtime(const NetworkSpec& net, const DemandSpec& demand,
                           const CorridorPolicy& policy, std::uint64_t seed, long erv_entry_s,
                           long window_s = 300);

}  // namespace evplab
