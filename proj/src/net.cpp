#include "evplab/net.hpp"

#include <cmath>
#include <cstdio>

#include "evplab/common.hpp"
#include "json.hpp"

namespace evplab {

using nlohmann::json;

int NetworkSpec::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < intersections.size(); ++i) {
    if (intersections[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

NetworkSpec default_testbed() {
  NetworkSpec net;
  net.entry_link_length_ft = 1800.0;
  net.exit_link_length_ft = 500.0;
  net.mainline_free_speed_mph = 45.0;
  net.erv_desired_speed_mph = 50.0;
  net.erv_caution_speed_mph = 20.0;
  net.demand = DemandSpec{900.0, 400.0, 900.0};

  const double spacings[] = {2000, 2500, 3000, 1500, 2200, 2800, 2600};
  const char* names[] = {"maple",  "oakview", "cedar",  "birch",
                         "laurel", "summit",  "juniper", "willow"};
  const double progression_fps = mph_to_fps(40.0);

  double pos = net.entry_link_length_ft;
  for (int i = 0; i < 8; ++i) {
    if (i > 0) pos += spacings[i - 1];
    IntersectionSpec x;
    x.id = names[i];
    x.position_ft = pos;
    x.advance_detector_setback_ft = 350.0;
    x.checkin_setback_ft = 1000.0;
    x.cross_demand_vph = net.demand.cross_vph;
    x.signal = SignalPlan{};
    x.signal.offset_s = std::floor(std::fmod(pos / progression_fps, x.signal.cycle_s));
    net.intersections.push_back(std::move(x));
  }
  return net;
}

namespace {

double require_number(const json& j, const std::string& key, const std::string& ctx) {
  if (!j.contains(key)) throw ConfigError("missing key '" + ctx + key + "'");
  if (!j[key].is_number()) throw ConfigError("key '" + ctx + key + "' must be a number");
  return j[key].get<double>();
}

double optional_number(const json& j, const std::string& key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ConfigError("key '" + key + "' must be a number");
  return j[key].get<double>();
}

}  // namespace

NetworkSpec load_network(const std::string& config_text) {
  json doc;
  try {
    doc = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("top level must be a JSON object");
  for (const char* key : {"intersections", "demand", "speeds"}) {
    if (!doc.contains(key)) throw ConfigError(std::string("missing key '") + key + "'");
  }

  NetworkSpec net;
  const json& speeds = doc["speeds"];
  net.mainline_free_speed_mph = require_number(speeds, "mainline_free_mph", "speeds.");
  net.erv_desired_speed_mph = require_number(speeds, "erv_desired_mph", "speeds.");
  net.erv_caution_speed_mph = require_number(speeds, "erv_caution_mph", "speeds.");

  const json& demand = doc["demand"];
  net.demand.mainline_vph = require_number(demand, "mainline_vph", "demand.");
  net.demand.cross_vph = require_number(demand, "cross_vph", "demand.");
  net.demand.warmup_s = require_number(demand, "warmup_s", "demand.");

  net.entry_link_length_ft = optional_number(doc, "entry_link_ft", 1800.0);
  net.exit_link_length_ft = optional_number(doc, "exit_link_ft", 500.0);

  const json& xs = doc["intersections"];
  if (!xs.is_array() || xs.empty()) {
    throw ConfigError("key 'intersections' must be a non-empty array");
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const json& jx = xs[i];
    const std::string ctx = "intersections[" + std::to_string(i) + "].";
    if (!jx.is_object()) throw ConfigError("'" + ctx + "' must be an object");
    IntersectionSpec x;
    if (!jx.contains("id") || !jx["id"].is_string()) {
      throw ConfigError("missing key '" + ctx + "id'");
    }
    x.id = jx["id"].get<std::string>();
    x.position_ft = require_number(jx, "position_ft", ctx);
    x.advance_detector_setback_ft = optional_number(jx, "advance_detector_setback_ft", 350.0);
    x.checkin_setback_ft = optional_number(jx, "checkin_setback_ft", 1000.0);
    x.cross_demand_vph = optional_number(jx, "cross_demand_vph", net.demand.cross_vph);
    if (!jx.contains("signal") || !jx["signal"].is_object()) {
      throw ConfigError("missing key '" + ctx + "signal'");
    }
    const json& js = jx["signal"];
    const std::string sctx = ctx + "signal.";
    x.signal.cycle_s = require_number(js, "cycle_s", sctx);
    x.signal.offset_s = require_number(js, "offset_s", sctx);
    x.signal.mainline_green_s = require_number(js, "mainline_green_s", sctx);
    x.signal.cross_green_s = require_number(js, "cross_green_s", sctx);
    x.signal.yellow_s = require_number(js, "yellow_s", sctx);
    x.signal.all_red_s = require_number(js, "all_red_s", sctx);
    x.signal.min_green_s = require_number(js, "min_green_s", sctx);
    net.intersections.push_back(std::move(x));
  }

  auto violations = validate(net);
  if (!violations.empty()) {
    throw ConfigError("invariant violation: " + violations.front());
  }
  return net;
}

std::string serialize_network(const NetworkSpec& net) {
  json doc;
  doc["speeds"] = {{"mainline_free_mph", net.mainline_free_speed_mph},
                   {"erv_desired_mph", net.erv_desired_speed_mph},
                   {"erv_caution_mph", net.erv_caution_speed_mph}};
  doc["demand"] = {{"mainline_vph", net.demand.mainline_vph},
                   {"cross_vph", net.demand.cross_vph},
                   {"warmup_s", net.demand.warmup_s}};
  doc["entry_link_ft"] = net.entry_link_length_ft;
  doc["exit_link_ft"] = net.exit_link_length_ft;
  json xs = json::array();
  for (const auto& x : net.intersections) {
    json jx;
    jx["id"] = x.id;
    jx["position_ft"] = x.position_ft;
    jx["advance_detector_setback_ft"] = x.advance_detector_setback_ft;
    jx["checkin_setback_ft"] = x.checkin_setback_ft;
    jx["cross_demand_vph"] = x.cross_demand_vph;
    jx["signal"] = {{"cycle_s", x.signal.cycle_s},
                    {"offset_s", x.signal.offset_s},
                    {"mainline_green_s", x.signal.mainline_green_s},
                    {"cross_green_s", x.signal.cross_green_s},
                    {"yellow_s", x.signal.yellow_s},
                    {"all_red_s", x.signal.all_red_s},
                    {"min_green_s", x.signal.min_green_s}};
    xs.push_back(std::move(jx));
  }
  doc["intersections"] = std::move(xs);
  return doc.dump(2) + "\n";
}

std::vector<std::string> validate(const NetworkSpec& net) {
  std::vector<std::string> out;
  auto fail = [&](const std::string& msg) { out.push_back(msg); };

  if (net.intersections.empty()) fail("intersections: list is empty");
  if (net.entry_link_length_ft <= 0) fail("entry_link_ft: must be > 0");
  if (net.mainline_free_speed_mph <= 0 || net.erv_desired_speed_mph <= 0 ||
      net.erv_caution_speed_mph <= 0) {
    fail("speeds: all speeds must be > 0");
  }
  if (!(net.erv_caution_speed_mph < net.mainline_free_speed_mph &&
        net.mainline_free_speed_mph < net.erv_desired_speed_mph)) {
    fail("speeds: require erv_caution < mainline_free < erv_desired");
  }
  if (net.demand.mainline_vph < 0 || net.demand.cross_vph < 0) fail("demand: rates must be >= 0");
  if (net.demand.warmup_s < 0) fail("demand.warmup_s: must be >= 0");

  for (std::size_t i = 0; i < net.intersections.size(); ++i) {
    const auto& x = net.intersections[i];
    if (i == 0) {
      if (x.position_ft < net.entry_link_length_ft - 1e-9) {
        fail(x.id + ": first stop-bar before end of entry link");
      }
    } else {
      double spacing = x.position_ft - net.intersections[i - 1].position_ft;
      if (spacing <= 0) fail(x.id + ": positions not strictly increasing");
      if (spacing > 3000.0) fail(x.id + ": spacing " + std::to_string(spacing) + " violates spacing <= 3000 ft");
    }
    if (x.advance_detector_setback_ft < 200.0 || x.advance_detector_setback_ft > 500.0) {
      fail(x.id + ": advance detector outside 200-500 ft upstream");
    }
    if (x.checkin_setback_ft <= 0) fail(x.id + ": checkin_setback_ft must be > 0");
    if (x.cross_demand_vph < 0) fail(x.id + ": cross_demand_vph must be >= 0");

    const SignalPlan& p = x.signal;
    double sum = p.mainline_green_s + p.cross_green_s + 2.0 * (p.yellow_s + p.all_red_s);
    if (std::abs(sum - p.cycle_s) > 1e-9) fail("cycle sum mismatch at " + x.id);
    if (p.cycle_s <= 0) fail(x.id + ": cycle_s must be > 0");
    if (p.mainline_green_s <= 0 || p.cross_green_s <= 0) fail(x.id + ": green times must be > 0");
    if (p.yellow_s < 0 || p.all_red_s < 0) fail(x.id + ": clearance times must be >= 0");
    if (p.min_green_s > std::min(p.mainline_green_s, p.cross_green_s)) {
      fail(x.id + ": min_green_s exceeds a phase green");
    }
    if (p.offset_s < 0 || p.offset_s >= p.cycle_s) fail(x.id + ": offset_s outside [0, cycle)");
  }
  return out;
}

}  // namespace evplab
