#include "evplab/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "evplab/parallel.hpp"

namespace evplab {

namespace {

double cross_free_flow_tt_s() {
  return (kCrossApproachFt + kBoxLengthFt + kVehicleLengthFt) / mph_to_fps(kCrossFreeSpeedMph);
}

double median_of_sorted(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Metrics compute_metrics(const RunResult& run, const NetworkSpec& net) {
  if (run.erv_exit_s < 0 || run.erv_entry_s < 0) {
    throw DataError("compute_metrics: run has no complete ERV traversal");
  }
  Metrics m;
  m.erv_travel_time_s = run.erv_exit_s - run.erv_entry_s;
  m.erv_avg_speed_mph = net.corridor_length_miles() / (m.erv_travel_time_s / 3600.0);

  m.preempt_duration_s.resize(run.intersections.size(), 0.0);
  for (std::size_t i = 0; i < run.intersections.size(); ++i) {
    m.preempt_duration_s[i] = run.intersections[i].preempt_duration_s;
    m.aggregate_preempt_s += run.intersections[i].preempt_duration_s;
  }

  // mainline cohort: completed traversals overlapping [entry, exit + 300]
  const double win_lo = run.erv_entry_s;
  const double win_hi = run.erv_exit_s + 300.0;
  std::vector<double> mainline_tt;
  for (const VehicleRecord& v : run.vehicles) {
    if (v.lane != 0 || v.cls != VehicleClass::General || v.exit_s < 0) continue;
    if (v.entry_s <= win_hi && v.exit_s >= win_lo) mainline_tt.push_back(v.exit_s - v.entry_s);
  }
  std::sort(mainline_tt.begin(), mainline_tt.end());
  m.mainline_count = static_cast<int>(mainline_tt.size());
  if (!mainline_tt.empty()) {
    double sum = 0;
    for (double t : mainline_tt) sum += t;
    m.mainline_tt_mean_s = sum / mainline_tt.size();
    m.mainline_tt_median_s = median_of_sorted(mainline_tt);
  }

  // cross-street vehicles entering within 300 s of their intersection's call
  const double base = cross_free_flow_tt_s();
  double delay_sum = 0;
  int delay_count = 0;
  for (std::size_t i = 0; i < run.intersections.size(); ++i) {
    if (!run.intersections[i].call_time_s) continue;
    double lo = *run.intersections[i].call_time_s;
    double hi = lo + 300.0;
    for (const VehicleRecord& v : run.vehicles) {
      if (v.lane != static_cast<int>(i) + 1 || v.exit_s < 0) continue;
      if (v.entry_s >= lo && v.entry_s <= hi) {
        delay_sum += (v.exit_s - v.entry_s) - base;
        ++delay_count;
      }
    }
  }
  m.sidestreet_count = delay_count;
  m.sidestreet_delay_mean_s = delay_count > 0 ? delay_sum / delay_count : 0.0;
  return m;
}

ComparisonReport compare_strategies(const NetworkSpec& net, const DemandSpec& demand,
                                    std::span<const ScenarioSolution> test_scenarios,
                                    const CorridorPolicy& policy, unsigned jobs) {
  ComparisonReport report;
  report.strategies.assign(std::begin(kComparisonStrategies), std::end(kComparisonStrategies));
  for (const auto& sol : test_scenarios) {
    report.scenario_ids.push_back(sol.desc.id);
    report.scenario_seeds.push_back(sol.desc.seed);
    report.scenario_entries.push_back(sol.desc.erv_entry_s);
  }
  report.metrics.assign(report.strategies.size(),
                        std::vector<Metrics>(test_scenarios.size()));

  WarmupPool pool(net, demand);
  const std::size_t total = report.strategies.size() * test_scenarios.size();
  parallel_for(total, jobs, [&](std::size_t flat) {
    const std::size_t s = flat / test_scenarios.size();
    const std::size_t k = flat % test_scenarios.size();
    const ScenarioSolution& sol = test_scenarios[k];
    std::unique_ptr<Strategy> strat;
    switch (static_cast<StrategyKind>(s)) {
      case StrategyKind::NoEvp: strat = std::make_unique<NoEvpStrategy>(); break;
      case StrategyKind::CiCo: strat = std::make_unique<CiCoStrategy>(); break;
      case StrategyKind::Dp: strat = std::make_unique<DpStrategy>(); break;
      case StrategyKind::Optimal:
        strat = std::make_unique<ScheduleStrategy>(sol.optimal, StrategyKind::Optimal);
        break;
      case StrategyKind::Ideal:
        strat = std::make_unique<ScheduleStrategy>(sol.ideal, StrategyKind::Ideal);
        break;
      case StrategyKind::Mlevp:
        strat = std::make_unique<MlevpStrategy>(net, &policy);
        break;
    }
    RunResult run =
        continue_scenario(pool.warmed_copy(sol.desc.seed, true), sol.desc.erv_entry_s, *strat);
    report.metrics[s][k] = compute_metrics(run, net);
  });
  return report;
}

DistSummary summarize(std::vector<double> values) {
  DistSummary d;
  if (values.empty()) return d;
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  d.mean = sum / values.size();
  d.median = median_of_sorted(values);
  auto rank = [&](double q) {
    std::size_t idx = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(values.size())));
    if (idx == 0) idx = 1;
    return values[std::min(values.size() - 1, idx - 1)];
  };
  d.p25 = rank(0.25);
  d.p75 = rank(0.75);
  d.min = values.front();
  d.max = values.back();
  return d;
}

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::vector<double> metric_column(const ComparisonReport& r, std::size_t strategy,
                                  double Metrics::*field) {
  std::vector<double> out;
  out.reserve(r.metrics[strategy].size());
  for (const Metrics& m : r.metrics[strategy]) out.push_back(m.*field);
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

std::string svg_box_plot(const ComparisonReport& r, double Metrics::*field,
                         const std::string& title) {
  const std::size_t ns = r.strategies.size();
  std::vector<DistSummary> ds(ns);
  double lo = 1e300, hi = -1e300;
  for (std::size_t s = 0; s < ns; ++s) {
    ds[s] = summarize(metric_column(r, s, field));
    lo = std::min(lo, ds[s].min);
    hi = std::max(hi, ds[s].max);
  }
  if (hi <= lo) hi = lo + 1.0;
  const double W = 640, H = 360, ml = 70, mr = 20, mt = 40, mb = 50;
  const double plot_w = W - ml - mr, plot_h = H - mt - mb;
  auto ypix = [&](double v) { return mt + plot_h * (1.0 - (v - lo) / (hi - lo)); };

  std::string out;
  char buf[256];
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"640\" height=\"360\">\n";
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%.1f\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" "
                "text-anchor=\"middle\">%s</text>\n",
                W / 2, title.c_str());
  out += buf;
  out += "<rect x=\"70\" y=\"40\" width=\"550\" height=\"270\" fill=\"none\" stroke=\"#888\"/>\n";
  for (int g = 0; g <= 4; ++g) {
    double v = lo + (hi - lo) * g / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"64\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"10\" "
                  "text-anchor=\"end\">%.1f</text>\n",
                  ypix(v) + 3, v);
    out += buf;
  }
  for (std::size_t s = 0; s < ns; ++s) {
    double cx = ml + plot_w * (static_cast<double>(s) + 0.5) / static_cast<double>(ns);
    double bw = plot_w / static_cast<double>(ns) * 0.4;
    const DistSummary& d = ds[s];
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#444\"/>\n",
                  cx, ypix(d.min), cx, ypix(d.max));
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"#9ecae1\" "
                  "stroke=\"#333\"/>\n",
                  cx - bw / 2, ypix(d.p75), bw, std::max(1.0, ypix(d.p25) - ypix(d.p75)));
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#b30000\" "
                  "stroke-width=\"2\"/>\n",
                  cx - bw / 2, ypix(d.median), cx + bw / 2, ypix(d.median));
    out += buf;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">%s</text>\n",
                  cx, H - mb + 16, r.strategies[s].c_str());
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace

void render_report(const ComparisonReport& report, const NetworkSpec& net,
                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::size_t ns = report.strategies.size();
  const std::size_t nk = report.scenario_ids.size();

  // one row per (strategy, scenario)
  std::string csv =
      "strategy,scenario_id,seed,erv_entry_s,erv_travel_time_s,erv_avg_speed_mph,"
      "aggregate_preempt_s,mainline_tt_mean_s,mainline_tt_median_s,mainline_count,"
      "sidestreet_delay_mean_s,sidestreet_count\n";
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t k = 0; k < nk; ++k) {
      const Metrics& m = report.metrics[s][k];
      csv += report.strategies[s];
      csv += ',' + std::to_string(report.scenario_ids[k]);
      csv += ',' + std::to_string(report.scenario_seeds[k]);
      csv += ',' + std::to_string(report.scenario_entries[k]);
      csv += ',' + fmt(m.erv_travel_time_s);
      csv += ',' + fmt(m.erv_avg_speed_mph);
      csv += ',' + fmt(m.aggregate_preempt_s);
      csv += ',' + fmt(m.mainline_tt_mean_s);
      csv += ',' + fmt(m.mainline_tt_median_s);
      csv += ',' + std::to_string(m.mainline_count);
      csv += ',' + fmt(m.sidestreet_delay_mean_s);
      csv += ',' + std::to_string(m.sidestreet_count);
      csv += '\n';
    }
  }
  write_file(out_dir + "/metrics.csv", csv);

  struct Field {
    const char* name;
    double Metrics::*ptr;
  };
  const Field fields[] = {
      {"erv_travel_time_s", &Metrics::erv_travel_time_s},
      {"erv_avg_speed_mph", &Metrics::erv_avg_speed_mph},
      {"aggregate_preempt_s", &Metrics::aggregate_preempt_s},
      {"mainline_tt_mean_s", &Metrics::mainline_tt_mean_s},
      {"sidestreet_delay_mean_s", &Metrics::sidestreet_delay_mean_s},
  };

  std::string summary = "metric,strategy,mean,median,p25,p75,min,max\n";
  for (const Field& f : fields) {
    for (std::size_t s = 0; s < ns; ++s) {
      DistSummary d = summarize(metric_column(report, s, f.ptr));
      summary += f.name;
      summary += ',' + report.strategies[s];
      summary += ',' + fmt(d.mean) + ',' + fmt(d.median) + ',' + fmt(d.p25) + ',' + fmt(d.p75) +
                 ',' + fmt(d.min) + ',' + fmt(d.max) + '\n';
    }
  }
  // published corridor speeds, for side-by-side orientation only
  summary +=
      "erv_avg_speed_mph_reference,paper reference - VISSIM/PIB not directly comparable,"
      "31.4,34.4,39.3,43.4,41.6,42.5\n";
  write_file(out_dir + "/summary.csv", summary);

  // paired travel-time deltas
  std::string pairs = "strategy_a,strategy_b,mean_diff_s,a_faster,b_faster,ties\n";
  for (std::size_t a = 0; a < ns; ++a) {
    for (std::size_t b = a + 1; b < ns; ++b) {
      double diff = 0;
      int af = 0, bf = 0, ties = 0;
      for (std::size_t k = 0; k < nk; ++k) {
        double ta = report.metrics[a][k].erv_travel_time_s;
        double tb = report.metrics[b][k].erv_travel_time_s;
        diff += ta - tb;
        if (ta < tb - 1e-9) ++af;
        else if (tb < ta - 1e-9) ++bf;
        else ++ties;
      }
      pairs += report.strategies[a] + ',' + report.strategies[b] + ',' +
               fmt(nk ? diff / nk : 0.0) + ',' + std::to_string(af) + ',' + std::to_string(bf) +
               ',' + std::to_string(ties) + '\n';
    }
  }
  write_file(out_dir + "/pairwise_travel_time.csv", pairs);

  for (const Field& f : fields) {
    write_file(out_dir + "/plot_" + f.name + ".svg", svg_box_plot(report, f.ptr, f.name));
  }
  (void)net;
}

std::string BenchResult::to_json() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"factor\": %.3f, \"inference_ms_p50\": %.4f, \"inference_ms_p99\": %.4f, "
                "\"factor_noevp\": %.3f}\n",
                factor, inference_ms_p50, inference_ms_p99, factor_noevp);
  return buf;
}

BenchResult bench_realtime(const NetworkSpec& net, const DemandSpec& demand,
                           const CorridorPolicy& policy, std::uint64_t seed, long erv_entry_s,
                           long window_s) {
  BenchResult res;
  RunOptions opts;
  opts.record_events = false;
  opts.record_trajectory = false;

  auto timed_window = [&](Strategy& strat) {
    ScenarioEngine engine(net, demand, seed, opts);
    engine.advance_to(erv_entry_s, nullptr);
    engine.request_erv_injection(erv_entry_s);
    strat.reset();
    auto t0 = std::chrono::steady_clock::now();
    for (long k = 0; k < window_s; ++k) engine.tick_second(&strat);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  MlevpStrategy mlevp(net, &policy);
  double wall = timed_window(mlevp);
  res.factor = static_cast<double>(window_s) / wall;

  std::vector<double> inf = mlevp.inference_seconds();
  std::sort(inf.begin(), inf.end());
  if (!inf.empty()) {
    auto rank = [&](double q) {
      std::size_t idx =
          static_cast<std::size_t>(std::ceil(q * static_cast<double>(inf.size())));
      if (idx == 0) idx = 1;
      return inf[std::min(inf.size() - 1, idx - 1)] * 1000.0;
    };
    res.inference_ms_p50 = rank(0.50);
    res.inference_ms_p99 = rank(0.99);
  }

  NoEvpStrategy noevp;
  res.factor_noevp = static_cast<double>(window_s) / timed_window(noevp);
  return res;
}

}  // namespace evplab
