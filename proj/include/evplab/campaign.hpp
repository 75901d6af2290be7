#pragma once

#include "evplab/learn.hpp"
#include "evplab/strategies.hpp"

namespace evplab {

struct ScenarioDescriptor {
  int id = 0;
  std::uint64_t seed = 1;
  long erv_entry_s = 0;
};

enum class Subset : std::uint8_t { Train = 0, Validation = 1, Test = 2 };
const char* to_string(Subset subset);

struct ScenarioSolution {
  ScenarioDescriptor desc;
  CallSchedule optimal;
  CallSchedule ideal;
  Subset subset = Subset::Train;
  std::vector<IntersectionSearchInfo> optimal_info, ideal_info;
};

// Entry seconds anchored at the end of warm-up, stepped 5 s across one
// 160 s cycle, replicated over seeds 1..replications.
std::vector<ScenarioDescriptor> make_campaign_descriptors(const DemandSpec& demand,
                                                          int entry_offsets = 32,
                                                          int replications = 5,
                                                          long offset_step_s = 5);

// Optimal and ideal schedules for every descriptor (two sequential search
// passes per scenario; scenarios solved in parallel).
std::vector<ScenarioSolution> solve_campaign(const NetworkSpec& net, const DemandSpec& demand,
                                             std::span<const ScenarioDescriptor> descriptors,
                                             unsigned jobs, double margin_s = 2.0);

// 60/20/20 split by whole scenario, stratified on how many intersections
// benefit from an early call. Throws DataError on fewer than 5 scenarios.
void split_scenarios(std::span<ScenarioSolution> scenarios, std::uint64_t seed);

// Full recorded run of each scenario under its ideal schedule.
std::vector<RunSeries> simulate_ideal_runs(std::span<const ScenarioSolution> scenarios,
                                           WarmupPool& pool, unsigned jobs);

// Training rows for one intersection from the given (scenario, series) pairs.
// Scenarios whose call lands on the entry second carry no trainable rows and
// are skipped.
IntersectionData build_training_data(const NetworkSpec& net,
                                     std::span<const ScenarioSolution> scenarios,
                                     std::span<const RunSeries> series, int intersection);

// Offline evaluation rows (entry..check-in second) for one intersection.
ValidationSet build_validation_set(const NetworkSpec& net,
                                   std::span<const ScenarioSolution> scenarios,
                                   std::span<const RunSeries> series, int intersection);

// ---------------------------------------------------------------------------
// model selection

struct SelectionGrid {
  std::vector<CurveForm> curves{kAllCurves, kAllCurves + 5};
  std::vector<double> cutoffs{0.90, 0.925, 0.95, 0.98};
  std::vector<double> no_pr_thres{0.90, 0.925, 0.95, 0.98};  // paired with cutoffs >= value
  bool use_linear = true;
  bool use_mlp = true;
  LinearTrainSpec linear_spec;
  MlpTrainSpec mlp_spec;
  int k_folds = 5;
  std::uint64_t seed = 1;
};

struct CandidateSummary {
  SoftLabelParams params;
  std::string regressor;
  double score = 0.0;
  bool rejected = false;
  ConfusionDurations durations;
  double train_wall_s = 0.0;
};

struct SelectionResult {
  TrainedModel best;
  std::vector<CandidateSummary> candidates;
};

// Ties on the score break on lower training wall time, then on lower mean
// cross-street delay measured by re-simulating the validation scenarios with
// the candidate driving this intersection.
struct TieBreakContext {
  WarmupPool* pool = nullptr;
  std::span<const ScenarioSolution> validation;
  int intersection = -1;
};

SelectionResult select_model(const IntersectionData& train_data, const ValidationSet& validation,
                             const SelectionGrid& grid, unsigned jobs,
                             const TieBreakContext* tie_break = nullptr);

// ---------------------------------------------------------------------------
// persistence

std::string campaign_to_json(const NetworkSpec& net,
                             std::span<const ScenarioSolution> scenarios);
std::vector<ScenarioSolution> campaign_from_json(const std::string& text,
                                                 const NetworkSpec& net);

}  // namespace evplab
