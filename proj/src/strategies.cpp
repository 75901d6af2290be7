#include "evplab/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "json.hpp"

namespace evplab {

const char* to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::NoEvp: return "noevp";
    case StrategyKind::CiCo: return "cico";
    case StrategyKind::Dp: return "dp";
    case StrategyKind::Optimal: return "optimal";
    case StrategyKind::Ideal: return "ideal";
    case StrategyKind::Mlevp: return "mlevp";
  }
  return "?";
}

StrategyKind strategy_kind_from_string(const std::string& name) {
  for (StrategyKind k : {StrategyKind::NoEvp, StrategyKind::CiCo, StrategyKind::Dp,
                         StrategyKind::Optimal, StrategyKind::Ideal, StrategyKind::Mlevp}) {
    if (name == to_string(k)) return k;
  }
  throw DataError("unknown strategy: " + name);
}

// ---------------------------------------------------------------------------

void CiCoStrategy::decide(const SimView& view, std::vector<int>& fire) {
  const int n = static_cast<int>(view.net->size());
  for (int i = 0; i < n; ++i) {
    if (view.calls[i].fired || view.erv_crossed(i)) continue;
    if (view.at_or_past_checkin(i)) fire.push_back(i);
  }
}

double DpStrategy::eta_s(double distance_ft, double speed_fps) {
  return distance_ft / std::max(speed_fps, mph_to_fps(10.0));
}

double DpStrategy::threshold_s(int queue, double buffer_s) {
  return kStartupLostS + kSaturationHeadwayS * queue + buffer_s;
}

void DpStrategy::decide(const SimView& view, std::vector<int>& fire) {
  const int n = static_cast<int>(view.net->size());
  for (int i = 0; i < n; ++i) {
    if (view.calls[i].fired || view.erv_crossed(i)) continue;
    double dist = view.net->intersections[i].position_ft - view.erv_pos();
    if (dist < 0) continue;
    double eta = eta_s(dist, view.erv_speed());
    int queue = view.sim->estimate_queue(i);
    if (eta <= threshold_s(queue, buffer_s_)) fire.push_back(i);
  }
}

// ---------------------------------------------------------------------------

void ScheduleStrategy::decide(const SimView& view, std::vector<int>& fire) {
  const int n = static_cast<int>(view.net->size());
  for (int i = 0; i < n && i < static_cast<int>(schedule_.entries.size()); ++i) {
    if (view.calls[i].fired || view.erv_crossed(i)) continue;
    const CallEntry& e = schedule_.entries[i];
    switch (e.kind) {
      case CallEntry::Kind::None:
        break;
      case CallEntry::Kind::Default:
        if (view.at_or_past_checkin(i)) fire.push_back(i);
        break;
      case CallEntry::Kind::At:
        if (view.t >= std::lround(e.t)) fire.push_back(i);
        break;
    }
  }
}

std::string CallSchedule::to_json(const NetworkSpec& net) const {
  nlohmann::json calls = nlohmann::json::object();
  for (std::size_t i = 0; i < entries.size() && i < net.size(); ++i) {
    const auto& id = net.intersections[i].id;
    switch (entries[i].kind) {
      case CallEntry::Kind::None: calls[id] = "none"; break;
      case CallEntry::Kind::Default: calls[id] = "default"; break;
      case CallEntry::Kind::At: calls[id] = entries[i].t; break;
    }
  }
  nlohmann::json doc;
  doc["calls"] = std::move(calls);
  return doc.dump();
}

CallSchedule CallSchedule::from_json(const std::string& text, const NetworkSpec& net) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("call schedule: invalid JSON: ") + e.what());
  }
  if (!doc.contains("calls") || !doc["calls"].is_object()) {
    throw DataError("call schedule: missing 'calls' object");
  }
  CallSchedule sched;
  sched.entries.assign(net.size(), CallEntry::standard());
  for (const auto& [id, value] : doc["calls"].items()) {
    int idx = net.index_of(id);
    if (idx < 0) throw DataError("call schedule: unknown intersection '" + id + "'");
    if (value.is_string()) {
      std::string s = value.get<std::string>();
      if (s == "none") sched.entries[idx] = CallEntry::none();
      else if (s == "default") sched.entries[idx] = CallEntry::standard();
      else throw DataError("call schedule: bad entry for '" + id + "'");
    } else if (value.is_number()) {
      sched.entries[idx] = CallEntry::at(value.get<double>());
    } else {
      throw DataError("call schedule: bad entry for '" + id + "'");
    }
  }
  return sched;
}

// ---------------------------------------------------------------------------

MlevpStrategy::MlevpStrategy(const NetworkSpec& net, const CorridorPolicy* policy)
    : policy_(policy) {
  const int n = static_cast<int>(net.size());
  model_by_index_.assign(n, nullptr);
  for (int i = 0; i < n; ++i) {
    const TrainedModel* m = policy_ ? policy_->find(net.intersections[i].id) : nullptr;
    if (i > 0 && m == nullptr) {
      throw DataError("mlevp: missing model for intersection " + net.intersections[i].id);
    }
    model_by_index_[i] = m;
  }
  feature_scratch_.resize(kFeatureCount);
}

void MlevpStrategy::reset() { inference_s_.clear(); }

void MlevpStrategy::decide(const SimView& view, std::vector<int>& fire) {
  const int n = static_cast<int>(view.net->size());
  const long t = view.t;
  const long entry = std::lround(view.sim->erv_entry_time());
  double spent = 0.0;

  std::array<std::uint8_t, kHistorySeconds> occ{}, color{}, preempt{};
  for (int i = 0; i < n; ++i) {
    if (view.calls[i].fired || view.erv_crossed(i)) continue;
    // guaranteed check-in floor, identical trigger to CI-CO
    if (view.at_or_past_checkin(i)) {
      fire.push_back(i);
      continue;
    }
    const TrainedModel* model = model_by_index_[i];
    if (!model) continue;

    color.fill(static_cast<std::uint8_t>(Color::Red));
    occ.fill(0);
    preempt.fill(0);
    const auto& so = view.series->occ[i];
    const auto& sc = view.series->color[i];
    const auto* sp = i > 0 ? &view.series->preempt[i - 1] : nullptr;
    for (int k = 0; k < kHistorySeconds; ++k) {
      long sec = t - (kHistorySeconds - 1) + k;
      if (sec < 0 || sec >= static_cast<long>(so.size())) continue;
      occ[k] = so[sec];
      color[k] = sc[sec];
      if (sp) preempt[k] = (*sp)[sec];
    }
    double d = std::max(0.0, view.net->intersections[i].position_ft - view.erv_pos());
    build_feature_vector(static_cast<double>(t - entry), d, occ, color, preempt,
                         feature_scratch_);
    auto c0 = std::chrono::steady_clock::now();
    double score = model->predict(feature_scratch_);
    spent += std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
    if (score > model->params.cutoff) fire.push_back(i);
  }
  inference_s_.push_back(spent);
}

// ---------------------------------------------------------------------------

ScenarioEngine WarmupPool::warmed_copy(std::uint64_t seed, bool record) {
  std::lock_guard<std::mutex> lock(mu_);
  auto key = std::make_pair(seed, record);
  auto it = cache_.find(key);
  if (it == cache_.end()) {
    RunOptions opts;
    opts.record_events = record;
    opts.record_trajectory = record;
    auto engine = std::make_unique<ScenarioEngine>(net_, demand_, seed, opts);
    engine->advance_to(std::lround(demand_.warmup_s), nullptr);
    it = cache_.emplace(key, std::move(engine)).first;
  }
  return *it->second;
}

namespace {

struct ProbeOutcome {
  double arrival = -1.0;  // ERV stop-bar crossing at the probed intersection
  long call_s = -1;
};

ProbeOutcome run_probe(WarmupPool& pool, std::uint64_t seed, long entry_s,
                       const CallSchedule& sched, int intersection, StrategyKind tag) {
  ScheduleStrategy strat(sched, tag);
  RunResult r =
      continue_scenario(pool.warmed_copy(seed, false), entry_s, strat, intersection);
  ProbeOutcome out;
  if (!r.intersections[intersection].stopbar_cross_s) {
    throw SimError("probe run ended without a stop-bar crossing");
  }
  out.arrival = *r.intersections[intersection].stopbar_cross_s;
  if (r.intersections[intersection].call_time_s) {
    out.call_s = std::lround(*r.intersections[intersection].call_time_s);
  }
  return out;
}

}  // namespace

CallEntry sweep_call_search(WarmupPool& pool, std::uint64_t seed, long erv_entry_s,
                            const CallSchedule& prefix, int intersection, double margin_s) {
  CallSchedule sched = prefix;
  sched.entries.resize(pool.net().size(), CallEntry::standard());
  for (std::size_t j = intersection; j < sched.entries.size(); ++j) {
    sched.entries[j] = CallEntry::standard();
  }
  ProbeOutcome def = run_probe(pool, seed, erv_entry_s, sched, intersection, StrategyKind::Ideal);
  long t_def = def.call_s;
  if (t_def <= erv_entry_s) return CallEntry::standard();

  std::vector<double> f(t_def - erv_entry_s + 1);
  double min_v = def.arrival;
  for (long c = erv_entry_s; c <= t_def; ++c) {
    sched.entries[intersection] = CallEntry::at(static_cast<double>(c));
    f[c - erv_entry_s] =
        run_probe(pool, seed, erv_entry_s, sched, intersection, StrategyKind::Ideal).arrival;
    min_v = std::min(min_v, f[c - erv_entry_s]);
  }
  double target = min_v + margin_s + 1e-9;
  if (def.arrival <= target) return CallEntry::standard();
  long best = erv_entry_s;
  for (long c = erv_entry_s; c <= t_def; ++c) {
    if (f[c - erv_entry_s] <= target) best = c;
  }
  return CallEntry::at(static_cast<double>(best));
}

ScheduleSearchResult search_call_schedule(WarmupPool& pool, std::uint64_t seed, long erv_entry_s,
                                          double margin_s) {
  const NetworkSpec& net = pool.net();
  const int n = static_cast<int>(net.size());
  const StrategyKind tag = margin_s > 0 ? StrategyKind::Ideal : StrategyKind::Optimal;

  ScheduleSearchResult out;
  out.schedule.entries.assign(n, CallEntry::standard());
  out.info.resize(n);

  for (int i = 0; i < n; ++i) {
    IntersectionSearchInfo& info = out.info[i];
    CallSchedule sched = out.schedule;  // upstream entries fixed, downstream default

    std::map<long, double> memo;
    bool monotone = true;
    auto f = [&](long c) {
      auto it = memo.find(c);
      if (it != memo.end()) return it->second;
      sched.entries[i] = CallEntry::at(static_cast<double>(c));
      double v = run_probe(pool, seed, erv_entry_s, sched, i, tag).arrival;
      ++info.probes;
      it = memo.emplace(c, v).first;
      // the objective must be non-decreasing in the call time
      if (it != memo.begin() && std::prev(it)->second > v + 1e-9) monotone = false;
      auto nx = std::next(it);
      if (nx != memo.end() && v > nx->second + 1e-9) monotone = false;
      return v;
    };

    sched.entries[i] = CallEntry::standard();
    ProbeOutcome def = run_probe(pool, seed, erv_entry_s, sched, i, tag);
    ++info.probes;
    info.default_objective = def.arrival;
    info.default_call_s = def.call_s;

    CallEntry chosen = CallEntry::standard();
    const long t_def = def.call_s;
    if (t_def > erv_entry_s) {
      double f_lo = f(erv_entry_s);
      if (def.arrival < f_lo - 1e-9) monotone = false;
      double strict_min = std::min(f_lo, def.arrival);
      info.objective_min = strict_min;
      const double target = strict_min + margin_s + 1e-9;

      if (def.arrival <= target) {
        chosen = CallEntry::standard();
      } else {
        // extra witnesses against unprobed dips
        if (t_def - erv_entry_s > 8) {
          f(erv_entry_s + (t_def - erv_entry_s) / 4);
          f(erv_entry_s + 3 * (t_def - erv_entry_s) / 4);
        }
        if (f(t_def) <= target) {
          chosen = CallEntry::at(static_cast<double>(t_def));
        } else {
          long lo = erv_entry_s, hi = t_def;
          while (hi - lo > 1) {
            long mid = lo + (hi - lo) / 2;
            if (f(mid) <= target) lo = mid;
            else hi = mid;
          }
          chosen = CallEntry::at(static_cast<double>(lo));
        }
      }

      if (!monotone) {
        info.fallback_sweep = true;
        double min_v = def.arrival;
        for (long c = erv_entry_s; c <= t_def; ++c) min_v = std::min(min_v, f(c));
        double tgt = min_v + margin_s + 1e-9;
        info.objective_min = min_v;
        if (def.arrival <= tgt) {
          chosen = CallEntry::standard();
        } else {
          long best = erv_entry_s;
          for (long c = erv_entry_s; c <= t_def; ++c) {
            if (f(c) <= tgt) best = c;
          }
          chosen = CallEntry::at(static_cast<double>(best));
        }
      }
    } else {
      info.objective_min = def.arrival;
    }

    out.schedule.entries[i] = chosen;
  }
  return out;
}

CallSchedule optimal_call_search(const NetworkSpec& net, const DemandSpec& demand,
                                 std::uint64_t seed, long erv_entry_s,
                                 ScheduleSearchResult* detail) {
  WarmupPool pool(net, demand);
  ScheduleSearchResult res = search_call_schedule(pool, seed, erv_entry_s, 0.0);
  if (detail) *detail = res;
  return res.schedule;
}

CallSchedule ideal_call_search(const NetworkSpec& net, const DemandSpec& demand,
                               std::uint64_t seed, long erv_entry_s, double margin_s,
                               ScheduleSearchResult* detail) {
  WarmupPool pool(net, demand);
  ScheduleSearchResult res = search_call_schedule(pool, seed, erv_entry_s, margin_s);
  if (detail) *detail = res;
  return res.schedule;
}

int estimate_queue(const Sim& sim, int intersection) {
  return sim.estimate_queue(intersection);
}

}  // namespace evplab
