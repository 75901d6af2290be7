#include "evplab/campaign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evplab/parallel.hpp"
#include "json.hpp"

namespace evplab {

const char* to_string(Subset subset) {
  switch (subset) {
    case Subset::Train: return "train";
    case Subset::Validation: return "validation";
    case Subset::Test: return "test";
  }
  return "?";
}

std::vector<ScenarioDescriptor> make_campaign_descriptors(const DemandSpec& demand,
                                                          int entry_offsets, int replications,
                                                          long offset_step_s) {
  std::vector<ScenarioDescriptor> out;
  out.reserve(static_cast<std::size_t>(entry_offsets) * replications);
  // anchored past warm-up with room for the origin-clearing hold
  const long anchor = std::lround(demand.warmup_s) + 10;
  int id = 0;
  for (int k = 0; k < entry_offsets; ++k) {
    for (int rep = 1; rep <= replications; ++rep) {
      out.push_back({id++, static_cast<std::uint64_t>(rep), anchor + k * offset_step_s});
    }
  }
  return out;
}

std::vector<ScenarioSolution> solve_campaign(const NetworkSpec& net, const DemandSpec& demand,
                                             std::span<const ScenarioDescriptor> descriptors,
                                             unsigned jobs, double margin_s) {
  WarmupPool pool(net, demand);
  std::vector<ScenarioSolution> out(descriptors.size());
  parallel_for(descriptors.size(), jobs, [&](std::size_t k) {
    const ScenarioDescriptor& d = descriptors[k];
    ScenarioSolution sol;
    sol.desc = d;
    ScheduleSearchResult opt = search_call_schedule(pool, d.seed, d.erv_entry_s, 0.0);
    ScheduleSearchResult ideal = search_call_schedule(pool, d.seed, d.erv_entry_s, margin_s);
    sol.optimal = std::move(opt.schedule);
    sol.optimal_info = std::move(opt.info);
    sol.ideal = std::move(ideal.schedule);
    sol.ideal_info = std::move(ideal.info);
    out[k] = std::move(sol);
  });
  return out;
}

namespace {

int needed_count(const ScenarioSolution& sol) {
  int count = 0;
  for (std::size_t i = 1; i < sol.ideal.entries.size(); ++i) {
    if (sol.ideal.entries[i].kind == CallEntry::Kind::At) ++count;
  }
  return count;
}

}  // namespace

void split_scenarios(std::span<ScenarioSolution> scenarios, std::uint64_t seed) {
  if (scenarios.size() < 5) throw DataError("split_scenarios: need at least 5 scenarios");
  // group scenario indices by how many intersections want an early call
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    strata[needed_count(scenarios[k])].push_back(k);
  }
  RandomStream rng(substream_seed(seed, 4242));
  std::vector<std::size_t> order;
  order.reserve(scenarios.size());
  for (auto& [key, idx] : strata) {
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
      std::swap(idx[i - 1], idx[j]);
    }
    order.insert(order.end(), idx.begin(), idx.end());
  }
  // 60/20/20 as a repeating pattern across the stratified ordering
  static const Subset kPattern[5] = {Subset::Train, Subset::Train, Subset::Train,
                                     Subset::Validation, Subset::Test};
  for (std::size_t r = 0; r < order.size(); ++r) {
    scenarios[order[r]].subset = kPattern[r % 5];
  }
}

std::vector<RunSeries> simulate_ideal_runs(std::span<const ScenarioSolution> scenarios,
                                           WarmupPool& pool, unsigned jobs) {
  std::vector<RunSeries> out(scenarios.size());
  const NetworkSpec& net = pool.net();
  parallel_for(scenarios.size(), jobs, [&](std::size_t k) {
    const ScenarioSolution& sol = scenarios[k];
    ScheduleStrategy strat(sol.ideal, StrategyKind::Ideal);
    RunResult run = continue_scenario(pool.warmed_copy(sol.desc.seed, true),
                                      sol.desc.erv_entry_s, strat);
    out[k] = build_run_series(run, net);
    out[k].scenario_id = sol.desc.id;
  });
  return out;
}

IntersectionData build_training_data(const NetworkSpec& net,
                                     std::span<const ScenarioSolution> scenarios,
                                     std::span<const RunSeries> series, int intersection) {
  if (scenarios.size() != series.size()) {
    throw DataError("build_training_data: scenario/series size mismatch");
  }
  IntersectionData data;
  data.intersection_id = net.intersections[intersection].id;

  struct Pending {
    std::size_t k;
    long entry, call;
    bool needed;
  };
  std::vector<Pending> pending;
  std::size_t total_rows = 0;
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    const RunSeries& rs = series[k];
    long call = rs.call_s[intersection];
    if (call < 0 || rs.entry_s < 0) continue;
    if (call <= rs.entry_s) continue;  // no trainable window
    bool needed = scenarios[k].ideal.entries[intersection].kind == CallEntry::Kind::At;
    pending.push_back({k, rs.entry_s, call, needed});
    total_rows += static_cast<std::size_t>(call - rs.entry_s + 1);
  }

  data.x.resize(total_rows, kFeatureCount);
  data.row_t.reserve(total_rows);
  data.row_scenario.reserve(total_rows);
  std::size_t r = 0;
  for (const Pending& p : pending) {
    IntersectionData::ScenInfo sc;
    sc.scenario_id = scenarios[p.k].desc.id;
    sc.entry_s = p.entry;
    sc.call_s = p.call;
    sc.needed = p.needed;
    sc.row_begin = static_cast<int>(r);
    for (long t = p.entry; t <= p.call; ++t) {
      std::vector<double> fv = extract_features(series[p.k], net, intersection, t);
      for (int c = 0; c < kFeatureCount; ++c) data.x(r, c) = fv[c];
      data.row_t.push_back(t);
      data.row_scenario.push_back(static_cast<int>(data.scenarios.size()));
      ++r;
    }
    sc.row_end = static_cast<int>(r);
    data.scenarios.push_back(sc);
  }
  return data;
}

ValidationSet build_validation_set(const NetworkSpec& net,
                                   std::span<const ScenarioSolution> scenarios,
                                   std::span<const RunSeries> series, int intersection) {
  if (scenarios.size() != series.size()) {
    throw DataError("build_validation_set: scenario/series size mismatch");
  }
  ValidationSet vs;
  vs.intersection_id = net.intersections[intersection].id;

  std::size_t total_rows = 0;
  for (const RunSeries& rs : series) {
    if (rs.entry_s < 0 || rs.checkin_s[intersection] < 0) continue;
    total_rows += static_cast<std::size_t>(rs.checkin_s[intersection] - rs.entry_s + 1);
  }
  vs.x.resize(total_rows, kFeatureCount);

  std::size_t r = 0;
  for (std::size_t k = 0; k < scenarios.size(); ++k) {
    const RunSeries& rs = series[k];
    long t_default = rs.checkin_s[intersection];
    if (rs.entry_s < 0 || t_default < 0) continue;
    ValidationSet::Scenario sc;
    sc.scenario_id = scenarios[k].desc.id;
    sc.entry_s = rs.entry_s;
    sc.t_default = t_default;
    sc.t_ideal = rs.call_s[intersection] >= 0 ? rs.call_s[intersection] : t_default;
    sc.t_cross = rs.stopbar_s[intersection];
    sc.row_begin = static_cast<int>(r);
    for (long t = rs.entry_s; t <= t_default; ++t) {
      std::vector<double> fv = extract_features(rs, net, intersection, t);
      for (int c = 0; c < kFeatureCount; ++c) vs.x(r, c) = fv[c];
      ++r;
    }
    sc.row_end = static_cast<int>(r);
    vs.scenarios.push_back(sc);
  }
  return vs;
}

// ---------------------------------------------------------------------------

namespace {

// mean cross-street travel time at one intersection when the candidate alone
// drives it (other intersections on the plain check-in rule)
double tie_break_cross_delay(const TrainedModel& candidate, const TieBreakContext& ctx) {
  const NetworkSpec& net = ctx.pool->net();
  CorridorPolicy solo;
  for (std::size_t i = 1; i < net.size(); ++i) {
    if (static_cast<int>(i) == ctx.intersection) {
      solo.models.push_back(candidate);
    } else {
      solo.models.push_back(
          make_constant_model(net.intersections[i].id, 0.0, candidate.params));
    }
  }
  double total = 0.0;
  long count = 0;
  for (const ScenarioSolution& sol : ctx.validation) {
    MlevpStrategy strat(net, &solo);
    RunResult run = continue_scenario(ctx.pool->warmed_copy(sol.desc.seed, true),
                                      sol.desc.erv_entry_s, strat);
    const auto& o = run.intersections[ctx.intersection];
    if (!o.call_time_s) continue;
    double lo = *o.call_time_s, hi = *o.call_time_s + 300.0;
    for (const VehicleRecord& v : run.vehicles) {
      if (v.lane != 1 + ctx.intersection || v.exit_s < 0) continue;
      if (v.entry_s >= lo && v.entry_s <= hi) {
        total += v.exit_s - v.entry_s;
        ++count;
      }
    }
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

SelectionResult select_model(const IntersectionData& train_data, const ValidationSet& validation,
                             const SelectionGrid& grid, unsigned jobs,
                             const TieBreakContext* tie_break) {
  struct LabelJob {
    CurveForm curve;
    double npt;
    bool mlp;
  };
  std::vector<LabelJob> jobs_list;
  for (CurveForm curve : grid.curves) {
    for (double npt : grid.no_pr_thres) {
      bool any_cutoff = std::any_of(grid.cutoffs.begin(), grid.cutoffs.end(),
                                    [&](double c) { return npt <= c + 1e-12; });
      if (!any_cutoff) continue;
      if (grid.use_linear) jobs_list.push_back({curve, npt, false});
      if (grid.use_mlp) jobs_list.push_back({curve, npt, true});
    }
  }
  if (jobs_list.empty()) throw DataError("select_model: empty candidate grid");

  std::vector<TrainedModel> trained(jobs_list.size());
  parallel_for(jobs_list.size(), jobs, [&](std::size_t k) {
    const LabelJob& job = jobs_list[k];
    SoftLabelParams params{job.curve, 1.0, job.npt};  // cutoff assigned per candidate below
    TrainSpec spec = job.mlp ? TrainSpec{grid.mlp_spec} : TrainSpec{grid.linear_spec};
    trained[k] = train_regressor(train_data, params, spec, grid.k_folds, grid.seed);
  });

  SelectionResult result;
  struct Scored {
    std::size_t trained_idx;
    double cutoff;
    ModelScore score;
    ConfusionDurations cd;
  };
  std::vector<Scored> scored;
  for (std::size_t k = 0; k < jobs_list.size(); ++k) {
    for (double cutoff : grid.cutoffs) {
      if (jobs_list[k].npt > cutoff + 1e-12) continue;  // NoPrThres <= cutoff
      TrainedModel candidate = trained[k];
      candidate.params.cutoff = cutoff;
      ConfusionDurations cd = confusion_durations(candidate, validation);
      ModelScore ms = model_score(cd.fp_s, cd.fn_s, cd.tp_s);
      scored.push_back({k, cutoff, ms, cd});
      result.candidates.push_back({candidate.params, candidate.meta.regressor,
                                   ms.value, ms.rejected, cd,
                                   candidate.meta.train_wall_s});
    }
  }

  // lowest score wins; ties on training wall time, then re-simulated
  // cross-street delay
  std::size_t best = scored.size();
  for (std::size_t k = 0; k < scored.size(); ++k) {
    if (scored[k].score.rejected) continue;
    if (best == scored.size()) {
      best = k;
      continue;
    }
    const Scored& a = scored[k];
    const Scored& b = scored[best];
    double ta = trained[a.trained_idx].meta.train_wall_s;
    double tb = trained[b.trained_idx].meta.train_wall_s;
    if (score_prefers(a.score, ta, b.score, tb)) {
      best = k;
    } else if (!score_prefers(b.score, tb, a.score, ta) && tie_break && tie_break->pool) {
      // exact tie on score and training time: lower conflicting-traffic delay
      TrainedModel ca = trained[a.trained_idx];
      ca.params.cutoff = a.cutoff;
      TrainedModel cb = trained[b.trained_idx];
      cb.params.cutoff = b.cutoff;
      if (tie_break_cross_delay(ca, *tie_break) < tie_break_cross_delay(cb, *tie_break)) {
        best = k;
      }
    }
  }
  if (best == scored.size()) {
    throw DataError("select_model: every candidate was rejected (zero true-positive duration)");
  }
  result.best = trained[scored[best].trained_idx];
  result.best.params.cutoff = scored[best].cutoff;
  return result;
}

// ---------------------------------------------------------------------------

std::string campaign_to_json(const NetworkSpec& net,
                             std::span<const ScenarioSolution> scenarios) {
  nlohmann::json doc;
  doc["version"] = 1;
  nlohmann::json arr = nlohmann::json::array();
  auto entry_to_json = [&](const CallEntry& e) -> nlohmann::json {
    switch (e.kind) {
      case CallEntry::Kind::None: return "none";
      case CallEntry::Kind::Default: return "default";
      case CallEntry::Kind::At: return e.t;
    }
    return nullptr;
  };
  for (const ScenarioSolution& sol : scenarios) {
    nlohmann::json js;
    js["id"] = sol.desc.id;
    js["seed"] = sol.desc.seed;
    js["erv_entry_s"] = sol.desc.erv_entry_s;
    js["subset"] = to_string(sol.subset);
    nlohmann::json opt = nlohmann::json::object(), ideal = nlohmann::json::object();
    for (std::size_t i = 0; i < net.size(); ++i) {
      opt[net.intersections[i].id] = entry_to_json(sol.optimal.entries[i]);
      ideal[net.intersections[i].id] = entry_to_json(sol.ideal.entries[i]);
    }
    js["optimal"] = std::move(opt);
    js["ideal"] = std::move(ideal);
    arr.push_back(std::move(js));
  }
  doc["scenarios"] = std::move(arr);
  return doc.dump(1) + "\n";
}

std::vector<ScenarioSolution> campaign_from_json(const std::string& text,
                                                 const NetworkSpec& net) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("campaign file: invalid JSON: ") + e.what());
  }
  if (!doc.contains("scenarios")) throw DataError("campaign file: missing scenarios");
  auto entry_from_json = [&](const nlohmann::json& j) -> CallEntry {
    if (j.is_string()) {
      if (j == "none") return CallEntry::none();
      if (j == "default") return CallEntry::standard();
      throw DataError("campaign file: bad call entry");
    }
    return CallEntry::at(j.get<double>());
  };
  std::vector<ScenarioSolution> out;
  for (const auto& js : doc["scenarios"]) {
    ScenarioSolution sol;
    sol.desc.id = js.at("id").get<int>();
    sol.desc.seed = js.at("seed").get<std::uint64_t>();
    sol.desc.erv_entry_s = js.at("erv_entry_s").get<long>();
    std::string subset = js.at("subset").get<std::string>();
    if (subset == "train") sol.subset = Subset::Train;
    else if (subset == "validation") sol.subset = Subset::Validation;
    else if (subset == "test") sol.subset = Subset::Test;
    else throw DataError("campaign file: bad subset " + subset);
    sol.optimal.entries.assign(net.size(), CallEntry::standard());
    sol.ideal.entries.assign(net.size(), CallEntry::standard());
    for (std::size_t i = 0; i < net.size(); ++i) {
      const std::string& id = net.intersections[i].id;
      sol.optimal.entries[i] = entry_from_json(js.at("optimal").at(id));
      sol.ideal.entries[i] = entry_from_json(js.at("ideal").at(id));
    }
    out.push_back(std::move(sol));
  }
  return out;
}

}  // namespace evplab
