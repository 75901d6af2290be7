#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "evplab/campaign.hpp"
#include "evplab/eval.hpp"
#include "evplab/parallel.hpp"
#include "evplab/sha256.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace evplab;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("EVPLAB_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return 1;
}

// every artifact-producing command drops a manifest next to its outputs
struct ManifestWriter {
  std::string command;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs, outputs;

  void add_input(const std::string& path) { inputs[path] = sha256_file_hex(path); }
  void add_output(const std::string& path) { outputs[path] = sha256_file_hex(path); }
  void write(const std::string& path) const {
    nlohmann::json doc;
    doc["command"] = command;
    doc["seed"] = seed;
    doc["version"] = kVersion;
    doc["inputs"] = inputs;
    doc["outputs"] = outputs;
    write_file(path, doc.dump(2) + "\n");
  }
};

NetworkSpec load_net_arg(const std::string& path) { return load_network(read_file(path)); }

std::vector<int> model_intersections(const NetworkSpec& net) {
  std::vector<int> out;
  for (int i = 1; i < static_cast<int>(net.size()); ++i) out.push_back(i);
  return out;
}

int run_gen_net(const std::string& out_path) {
  NetworkSpec net = default_testbed();
  write_file(out_path, serialize_network(net));
  ManifestWriter mw{"gen-net", 0, {}, {}};
  mw.add_output(out_path);
  mw.write(out_path + ".manifest.json");
  std::cout << "wrote " << out_path << " (" << net.size() << " intersections)\n";
  return 0;
}

int run_validate(const std::string& net_path) {
  NetworkSpec net;
  try {
    net = load_net_arg(net_path);
  } catch (const ConfigError& e) {
    std::cout << "INVALID: " << e.what() << "\n";
    return 2;
  }
  auto violations = validate(net);
  if (violations.empty()) {
    std::cout << "OK: " << net.size() << " intersections, corridor "
              << net.corridor_length_ft() << " ft\n";
    return 0;
  }
  for (const auto& v : violations) std::cout << "VIOLATION: " << v << "\n";
  return 2;
}

std::unique_ptr<Strategy> make_strategy(const std::string& name, const NetworkSpec& net,
                                        const std::string& schedule_path,
                                        const std::string& policy_path,
                                        CorridorPolicy& policy_storage, std::uint64_t seed,
                                        long entry_s) {
  StrategyKind kind = strategy_kind_from_string(name);
  switch (kind) {
    case StrategyKind::NoEvp:
      return std::make_unique<NoEvpStrategy>();
    case StrategyKind::CiCo:
      return std::make_unique<CiCoStrategy>();
    case StrategyKind::Dp:
      return std::make_unique<DpStrategy>();
    case StrategyKind::Optimal:
    case StrategyKind::Ideal: {
      CallSchedule sched;
      if (!schedule_path.empty()) {
        sched = CallSchedule::from_json(read_file(schedule_path), net);
      } else {
        double margin = kind == StrategyKind::Ideal ? 2.0 : 0.0;
        sched = kind == StrategyKind::Ideal
                    ? ideal_call_search(net, net.demand, seed, entry_s, margin)
                    : optimal_call_search(net, net.demand, seed, entry_s);
      }
      return std::make_unique<ScheduleStrategy>(std::move(sched), kind);
    }
    case StrategyKind::Mlevp: {
      if (policy_path.empty()) throw DataError("mlevp strategy requires --policy");
      policy_storage = load_policy(read_file(policy_path));
      return std::make_unique<MlevpStrategy>(net, &policy_storage);
    }
  }
  throw DataError("unhandled strategy");
}

int run_simulate(const std::string& net_path, std::uint64_t seed, long entry_s,
                 const std::string& strategy, const std::string& schedule_path,
                 const std::string& policy_path, const std::string& out_dir) {
  NetworkSpec net = load_net_arg(net_path);
  CorridorPolicy policy_storage;
  auto strat =
      make_strategy(strategy, net, schedule_path, policy_path, policy_storage, seed, entry_s);
  RunResult run = run_scenario(net, net.demand, seed, static_cast<double>(entry_s), *strat);

  fs::create_directories(out_dir);
  write_file(out_dir + "/run.json", run.to_json(net));
  write_file(out_dir + "/trajectory.csv", run.trajectory_csv());
  write_file(out_dir + "/events.jsonl", run.events.to_jsonl());

  ManifestWriter mw{"simulate", seed, {}, {}};
  mw.add_input(net_path);
  if (!schedule_path.empty()) mw.add_input(schedule_path);
  if (!policy_path.empty()) mw.add_input(policy_path);
  mw.add_output(out_dir + "/run.json");
  mw.add_output(out_dir + "/trajectory.csv");
  mw.add_output(out_dir + "/events.jsonl");
  mw.write(out_dir + "/manifest.json");
  std::cout << "ERV travel time " << run.erv_travel_time_s() << " s ("
            << net.corridor_length_miles() / (run.erv_travel_time_s() / 3600.0) << " mph)\n";
  return 0;
}

int run_optimal(const std::string& net_path, std::uint64_t seed, long entry_s, double margin,
                bool campaign, int offsets, int reps, unsigned jobs,
                const std::string& out_path) {
  NetworkSpec net = load_net_arg(net_path);
  std::vector<ScenarioDescriptor> descs;
  if (campaign) {
    descs = make_campaign_descriptors(net.demand, offsets, reps);
  } else {
    descs.push_back({0, seed, entry_s});
  }
  std::vector<ScenarioSolution> sols = solve_campaign(net, net.demand, descs, jobs, margin);
  if (sols.size() >= 5) split_scenarios(sols, seed);
  write_file(out_path, campaign_to_json(net, sols));
  ManifestWriter mw{"optimal", seed, {}, {}};
  mw.add_input(net_path);
  mw.add_output(out_path);
  mw.write(out_path + ".manifest.json");
  std::cout << "solved " << sols.size() << " scenario(s) -> " << out_path << "\n";
  return 0;
}

int run_gen_data(const std::string& net_path, std::uint64_t seed, int offsets, int reps,
                 unsigned jobs, const std::string& curve, double npt,
                 const std::string& out_dir) {
  NetworkSpec net = load_net_arg(net_path);
  auto descs = make_campaign_descriptors(net.demand, offsets, reps);
  std::cerr << "solving " << descs.size() << " scenarios (optimal + ideal searches)...\n";
  auto sols = solve_campaign(net, net.demand, descs, jobs, 2.0);
  split_scenarios(sols, seed);

  WarmupPool pool(net, net.demand);
  std::cerr << "simulating ideal runs...\n";
  auto series = simulate_ideal_runs(sols, pool, jobs);

  fs::create_directories(out_dir);
  ManifestWriter mw{"gen-data", seed, {}, {}};
  mw.add_input(net_path);

  std::string scen_path = out_dir + "/scenarios.json";
  write_file(scen_path, campaign_to_json(net, sols));
  mw.add_output(scen_path);

  SoftLabelParams params;
  params.curve = curve_from_string(curve);
  params.no_pr_thres = npt;
  for (int i : model_intersections(net)) {
    IntersectionData data = build_training_data(net, sols, series, i);
    std::string path = out_dir + "/dataset_" + net.intersections[i].id + ".csv";
    write_file(path, data.to_csv(params));
    mw.add_output(path);
    std::cerr << "  " << path << ": " << data.rows() << " rows, " << data.scenarios.size()
              << " scenarios\n";
  }
  mw.write(out_dir + "/manifest.json");
  std::cout << "campaign of " << sols.size() << " scenarios written to " << out_dir << "\n";
  return 0;
}

SelectionGrid make_grid(const std::vector<std::string>& curves,
                        const std::vector<double>& cutoffs, const std::vector<double>& npts,
                        const std::vector<std::string>& regressors, int epochs, int k_folds,
                        std::uint64_t seed) {
  SelectionGrid grid;
  grid.seed = seed;
  if (!curves.empty()) {
    grid.curves.clear();
    for (const auto& c : curves) grid.curves.push_back(curve_from_string(c));
  }
  if (!cutoffs.empty()) grid.cutoffs = cutoffs;
  if (!npts.empty()) grid.no_pr_thres = npts;
  if (!regressors.empty()) {
    grid.use_linear = grid.use_mlp = false;
    for (const auto& r : regressors) {
      if (r == "linear") grid.use_linear = true;
      else if (r == "mlp") grid.use_mlp = true;
      else throw DataError("unknown regressor: " + r);
    }
  }
  if (epochs > 0) grid.mlp_spec.epochs = epochs;
  if (k_folds > 0) grid.k_folds = k_folds;
  return grid;
}

// training scenarios only, reconstructed from the dataset csv + campaign file
IntersectionData filter_subset(const IntersectionData& all,
                               const std::map<int, Subset>& subset_of, Subset keep) {
  IntersectionData out;
  out.intersection_id = all.intersection_id;
  std::vector<std::size_t> keep_rows;
  for (std::size_t r = 0; r < all.rows(); ++r) {
    const auto& sc = all.scenarios[all.row_scenario[r]];
    auto it = subset_of.find(sc.scenario_id);
    if (it != subset_of.end() && it->second == keep) keep_rows.push_back(r);
  }
  out.x.resize(keep_rows.size(), all.x.cols());
  int last_scen = -1;
  for (std::size_t k = 0; k < keep_rows.size(); ++k) {
    std::size_t r = keep_rows[k];
    out.x.row(k) = all.x.row(r);
    out.row_t.push_back(all.row_t[r]);
    const auto& sc = all.scenarios[all.row_scenario[r]];
    if (sc.scenario_id != last_scen) {
      IntersectionData::ScenInfo ns = sc;
      ns.row_begin = static_cast<int>(k);
      ns.row_end = static_cast<int>(k);
      out.scenarios.push_back(ns);
      last_scen = sc.scenario_id;
    }
    out.scenarios.back().row_end = static_cast<int>(k + 1);
    out.row_scenario.push_back(static_cast<int>(out.scenarios.size() - 1));
  }
  return out;
}

int run_train(const std::string& net_path, const std::string& data_dir,
              const std::string& out_dir, const SelectionGrid& grid, unsigned jobs,
              const std::vector<std::string>& only) {
  NetworkSpec net = load_net_arg(net_path);
  auto sols = campaign_from_json(read_file(data_dir + "/scenarios.json"), net);
  std::map<int, Subset> subset_of;
  for (const auto& s : sols) subset_of[s.desc.id] = s.subset;

  fs::create_directories(out_dir);
  ManifestWriter mw{"train", grid.seed, {}, {}};
  mw.add_input(data_dir + "/scenarios.json");

  for (int i : model_intersections(net)) {
    const std::string& id = net.intersections[i].id;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    std::string csv_path = data_dir + "/dataset_" + id + ".csv";
    IntersectionData all = IntersectionData::from_csv(read_file(csv_path));
    mw.add_input(csv_path);
    IntersectionData train = filter_subset(all, subset_of, Subset::Train);
    std::cerr << id << ": " << train.rows() << " training rows\n";

    nlohmann::json candidates = nlohmann::json::array();
    struct Job {
      CurveForm curve;
      double npt;
      bool mlp;
    };
    std::vector<Job> jobs_list;
    for (CurveForm curve : grid.curves) {
      for (double npt : grid.no_pr_thres) {
        if (grid.use_linear) jobs_list.push_back({curve, npt, false});
        if (grid.use_mlp) jobs_list.push_back({curve, npt, true});
      }
    }
    std::vector<TrainedModel> models(jobs_list.size());
    parallel_for(jobs_list.size(), jobs, [&](std::size_t k) {
      SoftLabelParams p{jobs_list[k].curve, 1.0, jobs_list[k].npt};
      TrainSpec spec =
          jobs_list[k].mlp ? TrainSpec{grid.mlp_spec} : TrainSpec{grid.linear_spec};
      models[k] = train_regressor(train, p, spec, grid.k_folds, grid.seed);
    });
    for (auto& m : models) candidates.push_back(nlohmann::json::parse(save_model(m)));

    std::string out_path = out_dir + "/candidates_" + id + ".json";
    write_file(out_path, candidates.dump() + "\n");
    mw.add_output(out_path);
  }
  mw.write(out_dir + "/manifest.json");
  return 0;
}

int run_select(const std::string& net_path, const std::string& data_dir,
               const std::string& candidates_dir, const std::string& out_dir,
               const std::vector<double>& cutoffs, unsigned jobs, std::uint64_t seed) {
  NetworkSpec net = load_net_arg(net_path);
  auto sols = campaign_from_json(read_file(data_dir + "/scenarios.json"), net);
  std::vector<ScenarioSolution> val;
  for (const auto& s : sols) {
    if (s.subset == Subset::Validation) val.push_back(s);
  }
  if (val.empty()) throw DataError("select: no validation scenarios in campaign file");

  WarmupPool pool(net, net.demand);
  auto val_series = simulate_ideal_runs(val, pool, jobs);

  std::vector<double> cutoff_grid =
      cutoffs.empty() ? std::vector<double>{0.90, 0.925, 0.95, 0.98} : cutoffs;

  CorridorPolicy policy;
  std::string table = "Intersection | NoPrThres | Curve | Cutoff\n";
  fs::create_directories(out_dir);
  ManifestWriter mw{"select", seed, {}, {}};
  mw.add_input(data_dir + "/scenarios.json");

  for (int i : model_intersections(net)) {
    const std::string& id = net.intersections[i].id;
    std::string cand_path = candidates_dir + "/candidates_" + id + ".json";
    nlohmann::json arr = nlohmann::json::parse(read_file(cand_path));
    mw.add_input(cand_path);
    ValidationSet vs = build_validation_set(net, val, val_series, i);

    TrainedModel best;
    ModelScore best_score{0.0, true};
    bool found = false;
    for (const auto& jm : arr) {
      TrainedModel m = load_model(jm.dump());
      for (double cutoff : cutoff_grid) {
        if (m.params.no_pr_thres > cutoff + 1e-12) continue;
        TrainedModel candidate = m;
        candidate.params.cutoff = cutoff;
        ConfusionDurations cd = confusion_durations(candidate, vs);
        ModelScore ms = model_score(cd.fp_s, cd.fn_s, cd.tp_s);
        if (ms.rejected) continue;
        if (!found ||
            score_prefers(ms, candidate.meta.train_wall_s, best_score,
                          best.meta.train_wall_s)) {
          best = candidate;
          best_score = ms;
          found = true;
        }
      }
    }
    if (!found) throw DataError("select: every candidate rejected for " + id);
    char row[160];
    std::snprintf(row, sizeof(row), "%s | %.3f | %s | %.3f\n", id.c_str(),
                  best.params.no_pr_thres, to_string(best.params.curve), best.params.cutoff);
    table += row;
    policy.models.push_back(std::move(best));
  }

  std::string policy_path = out_dir + "/corridor_policy.json";
  write_file(policy_path, save_policy(policy));
  write_file(out_dir + "/selection_table.txt", table);
  mw.add_output(policy_path);
  mw.add_output(out_dir + "/selection_table.txt");
  mw.write(out_dir + "/manifest.json");
  std::cout << table;
  return 0;
}

int run_compare(const std::string& net_path, const std::string& scenarios_path,
                const std::string& policy_path, const std::string& out_dir, unsigned jobs) {
  NetworkSpec net = load_net_arg(net_path);
  auto sols = campaign_from_json(read_file(scenarios_path), net);
  std::vector<ScenarioSolution> test;
  for (const auto& s : sols) {
    if (s.subset == Subset::Test) test.push_back(s);
  }
  if (test.empty()) throw DataError("compare: no test scenarios in campaign file");
  CorridorPolicy policy = load_policy(read_file(policy_path));

  ComparisonReport report = compare_strategies(net, net.demand, test, policy, jobs);
  render_report(report, net, out_dir);

  ManifestWriter mw{"compare", 0, {}, {}};
  mw.add_input(net_path);
  mw.add_input(scenarios_path);
  mw.add_input(policy_path);
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    if (entry.path().filename() == "manifest.json") continue;
    mw.add_output(entry.path().string());
  }
  mw.write(out_dir + "/manifest.json");

  for (std::size_t s = 0; s < report.strategies.size(); ++s) {
    DistSummary d;
    std::vector<double> tts;
    for (const auto& m : report.metrics[s]) tts.push_back(m.erv_travel_time_s);
    d = summarize(tts);
    std::printf("%-8s mean ERV travel time %7.1f s\n", report.strategies[s].c_str(), d.mean);
  }
  return 0;
}

int run_bench(const std::string& net_path, const std::string& policy_path, std::uint64_t seed,
              long entry_s, const std::string& out_path) {
  NetworkSpec net = load_net_arg(net_path);
  CorridorPolicy policy = load_policy(read_file(policy_path));
  if (entry_s < 0) entry_s = std::lround(net.demand.warmup_s) + 5;
  BenchResult res = bench_realtime(net, net.demand, policy, seed, entry_s);
  std::cout << res.to_json();
  if (!out_path.empty()) {
    write_file(out_path, res.to_json());
    ManifestWriter mw{"bench", seed, {}, {}};
    mw.add_input(net_path);
    mw.add_input(policy_path);
    mw.add_output(out_path);
    mw.write(out_path + ".manifest.json");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evplab: signalized-corridor EVP strategy laboratory"};
  app.require_subcommand(1);

  std::uint64_t seed = default_seed();
  unsigned jobs = default_jobs();
  long entry_s = -1;
  double margin = 2.0;
  int offsets = 32, reps = 5, epochs = -1, k_folds = -1;
  bool campaign = false;
  std::string net_path, out_path = "out", schedule_path, policy_path, strategy = "noevp";
  std::string data_dir, candidates_dir, curve = "linear";
  double npt = 0.95;
  std::vector<std::string> curves, regressors, only;
  std::vector<double> cutoffs, npts;

  auto* gen_net = app.add_subcommand("gen-net", "emit the default testbed network config");
  gen_net->add_option("-o,--out", out_path, "output path")->required();

  auto* validate_cmd = app.add_subcommand("validate", "validate a network config");
  validate_cmd->add_option("--net", net_path)->required();

  auto* simulate = app.add_subcommand("simulate", "run one scenario under one strategy");
  simulate->add_option("--net", net_path)->required();
  simulate->add_option("--seed", seed);
  simulate->add_option("--entry", entry_s, "ERV entry second")->required();
  simulate->add_option("--strategy", strategy, "noevp|cico|dp|optimal|ideal|mlevp");
  simulate->add_option("--schedule", schedule_path, "call schedule JSON (optimal/ideal)");
  simulate->add_option("--policy", policy_path, "corridor policy JSON (mlevp)");
  simulate->add_option("-o,--out", out_path)->required();

  auto* optimal = app.add_subcommand("optimal", "emit optimal + ideal call schedules");
  optimal->add_option("--net", net_path)->required();
  optimal->add_option("--seed", seed);
  optimal->add_option("--entry", entry_s);
  optimal->add_option("--margin", margin);
  optimal->add_flag("--campaign", campaign, "full 32x5 scenario campaign");
  optimal->add_option("--offsets", offsets);
  optimal->add_option("--reps", reps);
  optimal->add_option("--jobs", jobs);
  optimal->add_option("-o,--out", out_path)->required();

  auto* gen_data = app.add_subcommand("gen-data", "generate the training campaign + datasets");
  gen_data->add_option("--net", net_path)->required();
  gen_data->add_option("--seed", seed);
  gen_data->add_option("--offsets", offsets);
  gen_data->add_option("--reps", reps);
  gen_data->add_option("--jobs", jobs);
  gen_data->add_option("--curve", curve, "label curve for the exported csv");
  gen_data->add_option("--noprthres", npt);
  gen_data->add_option("-o,--out", out_path)->required();

  auto* train = app.add_subcommand("train", "train candidate models per intersection");
  train->add_option("--net", net_path)->required();
  train->add_option("--data", data_dir)->required();
  train->add_option("--seed", seed);
  train->add_option("--jobs", jobs);
  train->add_option("--curves", curves, "curve subset");
  train->add_option("--noprthres-grid", npts);
  train->add_option("--regressors", regressors, "linear,mlp");
  train->add_option("--epochs", epochs);
  train->add_option("--k-folds", k_folds);
  train->add_option("--intersections", only, "restrict to these intersection ids");
  train->add_option("-o,--out", out_path)->required();

  auto* select = app.add_subcommand("select", "pick final models on the validation set");
  select->add_option("--net", net_path)->required();
  select->add_option("--data", data_dir)->required();
  select->add_option("--candidates", candidates_dir)->required();
  select->add_option("--cutoffs", cutoffs);
  select->add_option("--seed", seed);
  select->add_option("--jobs", jobs);
  select->add_option("-o,--out", out_path)->required();

  auto* compare = app.add_subcommand("compare", "six-strategy comparison on the test set");
  compare->add_option("--net", net_path)->required();
  compare->add_option("--scenarios", data_dir)->required();
  compare->add_option("--policy", policy_path)->required();
  compare->add_option("--jobs", jobs);
  compare->add_option("-o,--out", out_path)->required();

  auto* bench = app.add_subcommand("bench", "real-time factor benchmark");
  bench->add_option("--net", net_path)->required();
  bench->add_option("--policy", policy_path)->required();
  bench->add_option("--seed", seed);
  bench->add_option("--entry", entry_s);
  bench->add_option("-o,--out", out_path);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen_net->parsed()) return run_gen_net(out_path);
    if (validate_cmd->parsed()) return run_validate(net_path);
    if (simulate->parsed()) {
      return run_simulate(net_path, seed, entry_s, strategy, schedule_path, policy_path,
                          out_path);
    }
    if (optimal->parsed()) {
      if (!campaign && entry_s < 0) throw DataError("optimal: need --entry or --campaign");
      return run_optimal(net_path, seed, entry_s, margin, campaign, offsets, reps, jobs,
                         out_path);
    }
    if (gen_data->parsed()) {
      return run_gen_data(net_path, seed, offsets, reps, jobs, curve, npt, out_path);
    }
    if (train->parsed()) {
      SelectionGrid grid = make_grid(curves, cutoffs, npts, regressors, epochs, k_folds, seed);
      return run_train(net_path, data_dir, out_path, grid, jobs, only);
    }
    if (select->parsed()) {
      return run_select(net_path, data_dir, candidates_dir, out_path, cutoffs, jobs, seed);
    }
    if (compare->parsed()) {
      return run_compare(net_path, data_dir, policy_path, out_path, jobs);
    }
    if (bench->parsed()) {
      return run_bench(net_path, policy_path, seed, entry_s,
                       bench->count("-o") || bench->count("--out") ? out_path : "");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
