#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "evplab/campaign.hpp"
#include "evplab/eval.hpp"
#include "evplab/parallel.hpp"

namespace py = pybind11;
using namespace evplab;

namespace {

std::unique_ptr<Strategy> build_strategy(const NetworkSpec& net, const std::string& name,
                                         const CorridorPolicy* policy,
                                         const std::string& schedule_json) {
  StrategyKind kind = strategy_kind_from_string(name);
  switch (kind) {
    case StrategyKind::NoEvp: return std::make_unique<NoEvpStrategy>();
    case StrategyKind::CiCo: return std::make_unique<CiCoStrategy>();
    case StrategyKind::Dp: return std::make_unique<DpStrategy>();
    case StrategyKind::Optimal:
    case StrategyKind::Ideal: {
      if (schedule_json.empty()) {
        throw DataError("schedule strategies need schedule_json");
      }
      return std::make_unique<ScheduleStrategy>(
          CallSchedule::from_json(schedule_json, net), kind);
    }
    case StrategyKind::Mlevp: {
      if (!policy) throw DataError("mlevp needs a corridor policy");
      return std::make_unique<MlevpStrategy>(net, policy);
    }
  }
  throw DataError("unhandled strategy");
}

py::dict run_to_dict(const RunResult& run, const NetworkSpec& net) {
  py::dict out;
  out["seed"] = run.seed;
  out["erv_entry_s"] = run.erv_entry_s;
  out["erv_exit_s"] = run.erv_exit_s;
  out["erv_travel_time_s"] = run.erv_travel_time_s();
  py::list xs;
  for (std::size_t i = 0; i < run.intersections.size(); ++i) {
    const auto& o = run.intersections[i];
    py::dict jx;
    jx["id"] = net.intersections[i].id;
    jx["call_time_s"] = o.call_time_s ? py::object(py::float_(*o.call_time_s)) : py::none();
    jx["checkin_cross_s"] =
        o.checkin_cross_s ? py::object(py::float_(*o.checkin_cross_s)) : py::none();
    jx["stopbar_cross_s"] =
        o.stopbar_cross_s ? py::object(py::float_(*o.stopbar_cross_s)) : py::none();
    jx["preempt_duration_s"] = o.preempt_duration_s;
    xs.append(jx);
  }
  out["intersections"] = xs;
  Metrics m = compute_metrics(run, net);
  py::dict metrics;
  metrics["erv_travel_time_s"] = m.erv_travel_time_s;
  metrics["erv_avg_speed_mph"] = m.erv_avg_speed_mph;
  metrics["aggregate_preempt_s"] = m.aggregate_preempt_s;
  metrics["mainline_tt_mean_s"] = m.mainline_tt_mean_s;
  metrics["sidestreet_delay_mean_s"] = m.sidestreet_delay_mean_s;
  out["metrics"] = metrics;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Signalized-corridor emergency-vehicle preemption laboratory (C++ core)";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<SimError>(m, "SimError");

  py::class_<NetworkSpec>(m, "NetworkSpec")
      .def_property_readonly("size", [](const NetworkSpec& n) { return n.size(); })
      .def_property_readonly("corridor_length_ft", &NetworkSpec::corridor_length_ft)
      .def_property_readonly("intersection_ids",
                             [](const NetworkSpec& n) {
                               std::vector<std::string> ids;
                               for (const auto& x : n.intersections) ids.push_back(x.id);
                               return ids;
                             })
      .def("to_json", &serialize_network)
      .def("validate", [](const NetworkSpec& n) { return validate(n); });

  m.def("default_testbed", &default_testbed);
  m.def("load_network", &load_network, py::arg("config_text"));

  py::class_<CorridorPolicy>(m, "CorridorPolicy")
      .def_static("from_json", [](const std::string& text) { return load_policy(text); })
      .def("to_json", [](const CorridorPolicy& p) { return save_policy(p); })
      .def_property_readonly("size", [](const CorridorPolicy& p) { return p.models.size(); })
      .def("predict",
           [](const CorridorPolicy& p, const std::string& intersection_id,
              const std::vector<double>& features) {
             const TrainedModel* model = p.find(intersection_id);
             if (!model) throw DataError("no model for " + intersection_id);
             return model->predict(features);
           },
           py::arg("intersection_id"), py::arg("features"));

  m.def("constant_policy",
        [](const NetworkSpec& net, double value, double cutoff) {
          CorridorPolicy policy;
          SoftLabelParams params;
          params.cutoff = cutoff;
          for (std::size_t i = 1; i < net.size(); ++i) {
            policy.models.push_back(
                make_constant_model(net.intersections[i].id, value, params));
          }
          return policy;
        },
        py::arg("net"), py::arg("value") = 0.0, py::arg("cutoff") = 0.95);

  m.def("curve_value",
        [](const std::string& form, double u) { return curve_value(curve_from_string(form), u); },
        py::arg("form"), py::arg("u"));
  m.def("curve_forms", []() {
    std::vector<std::string> names;
    for (CurveForm f : kAllCurves) names.push_back(to_string(f));
    return names;
  });

  m.def("build_labels",
        [](long entry_s, long call_s, bool needed, const std::string& curve, double cutoff,
           double no_pr_thres) {
          SoftLabelParams p{curve_from_string(curve), cutoff, no_pr_thres};
          return build_labels(entry_s, call_s, needed, p);
        },
        py::arg("entry_s"), py::arg("call_s"), py::arg("needed"), py::arg("curve") = "linear",
        py::arg("cutoff") = 0.95, py::arg("no_pr_thres") = 0.95);

  m.def("model_score",
        [](double fp_s, double fn_s, double tp_s) {
          ModelScore ms = model_score(fp_s, fn_s, tp_s);
          py::dict out;
          out["value"] = ms.value;
          out["rejected"] = ms.rejected;
          return out;
        },
        py::arg("fp_s"), py::arg("fn_s"), py::arg("tp_s"));

  m.def("run_scenario",
        [](const NetworkSpec& net, std::uint64_t seed, double erv_entry_s,
           const std::string& strategy, const CorridorPolicy* policy,
           const std::string& schedule_json) {
          auto strat = build_strategy(net, strategy, policy, schedule_json);
          RunResult run = run_scenario(net, net.demand, seed, erv_entry_s, *strat);
          return run_to_dict(run, net);
        },
        py::arg("net"), py::arg("seed"), py::arg("erv_entry_s"), py::arg("strategy") = "noevp",
        py::arg("policy") = nullptr, py::arg("schedule_json") = std::string());

  m.def("optimal_call_search",
        [](const NetworkSpec& net, std::uint64_t seed, long erv_entry_s) {
          CallSchedule s = optimal_call_search(net, net.demand, seed, erv_entry_s);
          return s.to_json(net);
        },
        py::arg("net"), py::arg("seed"), py::arg("erv_entry_s"));

  m.def("ideal_call_search",
        [](const NetworkSpec& net, std::uint64_t seed, long erv_entry_s, double margin_s) {
          CallSchedule s = ideal_call_search(net, net.demand, seed, erv_entry_s, margin_s);
          return s.to_json(net);
        },
        py::arg("net"), py::arg("seed"), py::arg("erv_entry_s"), py::arg("margin_s") = 2.0);

  m.def("bench_realtime",
        [](const NetworkSpec& net, const CorridorPolicy& policy, std::uint64_t seed,
           long erv_entry_s) {
          if (erv_entry_s < 0) erv_entry_s = std::lround(net.demand.warmup_s) + 15;
          BenchResult r = bench_realtime(net, net.demand, policy, seed, erv_entry_s);
          py::dict out;
          out["factor"] = r.factor;
          out["factor_noevp"] = r.factor_noevp;
          out["inference_ms_p50"] = r.inference_ms_p50;
          out["inference_ms_p99"] = r.inference_ms_p99;
          return out;
        },
        py::arg("net"), py::arg("policy"), py::arg("seed") = 1, py::arg("erv_entry_s") = -1);

  m.attr("__version__") = kVersion;
  m.attr("FEATURE_COUNT") = kFeatureCount;
}
