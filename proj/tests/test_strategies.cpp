#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "evplab/strategies.hpp"

using namespace evplab;

namespace {

NetworkSpec small_net() {
  NetworkSpec net = default_testbed();
  net.demand.warmup_s = 300.0;
  return net;
}

}  // namespace

TEST_CASE("cico fires exactly at the check-in crossing") {
  NetworkSpec net = small_net();
  CiCoStrategy cico;
  RunResult run = run_scenario(net, net.demand, 3, 310.0, cico);
  for (std::size_t i = 0; i < net.size(); ++i) {
    REQUIRE(run.intersections[i].call_time_s.has_value());
    REQUIRE(run.intersections[i].checkin_cross_s.has_value());
    CHECK(*run.intersections[i].call_time_s == *run.intersections[i].checkin_cross_s);
    // released at the stop-bar: duration spans check-in to crossing
    CHECK(run.intersections[i].preempt_duration_s > 0);
  }
}

TEST_CASE("cico boundary: no request until the ERV reaches the check-in point") {
  NetworkSpec net = default_testbed();
  net.demand.mainline_vph = 0;
  net.demand.cross_vph = 0;
  net.demand.warmup_s = 0;
  for (auto& x : net.intersections) x.cross_demand_vph = 0;

  RunOptions opts;
  opts.record_events = false;
  Sim sim(net, net.demand, 1, opts);
  const double checkin = net.intersections[0].checkin_position_ft();
  sim.place_vehicle_for_test(0, checkin - 1.0, VehicleClass::Erv);

  CorridorSeries series;
  series.init(net.size());
  std::vector<CallState> calls(net.size());
  SimView view{0, &net, &sim, &series, std::span<const CallState>(calls)};

  CiCoStrategy cico;
  std::vector<int> fire;
  cico.decide(view, fire);  // 1001 ft upstream of nothing: at checkin-1 -> no call for i=0
  CHECK(std::find(fire.begin(), fire.end(), 0) == fire.end());

  Sim sim2(net, net.demand, 1, opts);
  sim2.place_vehicle_for_test(0, checkin, VehicleClass::Erv);
  SimView view2{0, &net, &sim2, &series, std::span<const CallState>(calls)};
  fire.clear();
  cico.decide(view2, fire);
  CHECK(std::find(fire.begin(), fire.end(), 0) != fire.end());
}

TEST_CASE("a queue past the check-in point delays the cico call") {
  NetworkSpec net = default_testbed();
  net.demand.mainline_vph = 0;
  net.demand.cross_vph = 0;
  net.demand.warmup_s = 0;
  for (auto& x : net.intersections) {
    x.cross_demand_vph = 0;
    x.signal.offset_s = 100;  // mainline red from t=0 until t=60
  }

  // queue tail stretches ~1200 ft upstream of the first stop-bar
  RunOptions opts;
  ScenarioEngine queued(net, net.demand, 1, opts);
  for (int k = 0; k < 48; ++k) {
    queued.sim().place_vehicle_for_test(0, net.intersections[0].position_ft - 10.0 - 25.0 * k);
  }
  CiCoStrategy cico;
  RunResult run_q = continue_scenario(std::move(queued), 5, cico);

  ScenarioEngine empty(net, net.demand, 1, opts);
  CiCoStrategy cico2;
  RunResult run_e = continue_scenario(std::move(empty), 5, cico2);

  REQUIRE(run_q.intersections[0].call_time_s.has_value());
  REQUIRE(run_e.intersections[0].call_time_s.has_value());
  CHECK(*run_q.intersections[0].call_time_s > *run_e.intersections[0].call_time_s);
}

TEST_CASE("dp thresholds follow the queue-clearance formula") {
  CHECK(DpStrategy::threshold_s(10, 5.0) == doctest::Approx(27.0));
  CHECK(DpStrategy::threshold_s(0, 5.0) == doctest::Approx(7.0));
  CHECK(DpStrategy::eta_s(1000.0, mph_to_fps(50.0)) == doctest::Approx(13.64).epsilon(0.01));
  // speed floor at 10 mph
  CHECK(DpStrategy::eta_s(1000.0, 1.0) == doctest::Approx(1000.0 / mph_to_fps(10.0)));

  // queue 10, eta 40 -> wait; eta 25 -> call (25 <= 27); queue 0, eta 6 -> call
  CHECK(40.0 > DpStrategy::threshold_s(10, 5.0));
  CHECK(25.0 <= DpStrategy::threshold_s(10, 5.0));
  CHECK(6.0 <= DpStrategy::threshold_s(0, 5.0));
}

TEST_CASE("moving platoon does not count as queue") {
  NetworkSpec net = default_testbed();
  net.demand.mainline_vph = 0;
  net.demand.cross_vph = 0;
  net.demand.warmup_s = 0;
  for (auto& x : net.intersections) x.cross_demand_vph = 0;
  RunOptions opts;
  Sim sim(net, net.demand, 1, opts);
  const double bar = net.intersections[0].position_ft;
  for (int k = 0; k < 5; ++k) sim.place_vehicle_for_test(0, bar - 200.0 - 130.0 * k);
  std::vector<Indications> green(net.size(), Indications{Color::Green, Color::Red});
  for (int k = 0; k < 30; ++k) sim.step(green);  // up to speed
  CHECK(sim.estimate_queue(0) == 0);
}

TEST_CASE("schedule strategy: none entries never call") {
  NetworkSpec net = small_net();
  CallSchedule sched;
  sched.entries.assign(net.size(), CallEntry::none());
  ScheduleStrategy strat(sched, StrategyKind::Optimal);
  RunResult run = run_scenario(net, net.demand, 3, 310.0, strat);
  for (const auto& o : run.intersections) CHECK(!o.call_time_s.has_value());
}

TEST_CASE("no-evp leaves zero preempt events in the log") {
  NetworkSpec net = small_net();
  NoEvpStrategy noevp;
  RunResult run = run_scenario(net, net.demand, 2, 310.0, noevp);
  for (const Event& e : run.events) CHECK(e.kind != EventKind::Preempt);
}

TEST_CASE("call schedule json round-trips") {
  NetworkSpec net = default_testbed();
  CallSchedule s;
  s.entries.assign(net.size(), CallEntry::standard());
  s.entries[2] = CallEntry::at(947.0);
  s.entries[5] = CallEntry::none();
  CallSchedule back = CallSchedule::from_json(s.to_json(net), net);
  REQUIRE(back.entries.size() == s.entries.size());
  for (std::size_t i = 0; i < s.entries.size(); ++i) CHECK(back.entries[i] == s.entries[i]);

  CHECK_THROWS_AS((void)CallSchedule::from_json(R"({"calls": {"nosuch": 1}})", net), DataError);
  CHECK_THROWS_AS((void)CallSchedule::from_json("<xml>", net), DataError);
}

TEST_CASE("optimal search equals the exhaustive sweep oracle") {
  NetworkSpec net = default_testbed();
  net.demand.warmup_s = 400.0;
  WarmupPool pool(net, net.demand);

  for (auto [seed, entry] : {std::pair<std::uint64_t, long>{1, 470},
                             std::pair<std::uint64_t, long>{2, 430}}) {
    ScheduleSearchResult got = search_call_schedule(pool, seed, entry, 0.0);
    // oracle builds its own sequential prefix from full sweeps
    CallSchedule oracle;
    oracle.entries.assign(net.size(), CallEntry::standard());
    for (int i = 0; i < static_cast<int>(net.size()); ++i) {
      oracle.entries[i] = sweep_call_search(pool, seed, entry, oracle, i, 0.0);
    }
    for (std::size_t i = 0; i < net.size(); ++i) {
      CAPTURE(seed);
      CAPTURE(entry);
      CAPTURE(i);
      CHECK(got.schedule.entries[i] == oracle.entries[i]);
    }
  }
}

TEST_CASE("ideal search: later calls, bounded objective, margin zero degenerates") {
  NetworkSpec net = default_testbed();
  net.demand.warmup_s = 400.0;
  WarmupPool pool(net, net.demand);
  const std::uint64_t seed = 1;
  const long entry = 450;

  ScheduleSearchResult opt = search_call_schedule(pool, seed, entry, 0.0);
  ScheduleSearchResult ideal = search_call_schedule(pool, seed, entry, 2.0);
  ScheduleSearchResult zero = search_call_schedule(pool, seed, entry, 0.0);

  for (std::size_t i = 0; i < net.size(); ++i) {
    CHECK(zero.schedule.entries[i] == opt.schedule.entries[i]);
    // realized ideal call never earlier than the optimal call
    auto when = [&](const CallEntry& e, const IntersectionSearchInfo& info) {
      return e.kind == CallEntry::Kind::At ? std::lround(e.t) : info.default_call_s;
    };
    CHECK(when(ideal.schedule.entries[i], ideal.info[i]) >=
          when(opt.schedule.entries[i], opt.info[i]));
  }

  // per-intersection objective within the margin of that search's optimum
  ScheduleStrategy ideal_strat(ideal.schedule, StrategyKind::Ideal);
  RunResult run = continue_scenario(pool.warmed_copy(seed, false), entry, ideal_strat);
  for (std::size_t i = 0; i < net.size(); ++i) {
    REQUIRE(run.intersections[i].stopbar_cross_s.has_value());
    CHECK(*run.intersections[i].stopbar_cross_s <= ideal.info[i].objective_min + 2.0 + 1e-6);
  }
}

TEST_CASE("flat objective keeps the default call") {
  // with an empty corridor and an early-green arrival, earlier calls gain
  // nothing, so every intersection stays on "default"
  NetworkSpec net = default_testbed();
  net.demand.mainline_vph = 0;
  net.demand.cross_vph = 0;
  net.demand.warmup_s = 50.0;
  for (auto& x : net.intersections) {
    x.cross_demand_vph = 0;
    x.signal.offset_s = 0;
  }
  WarmupPool pool(net, net.demand);
  ScheduleSearchResult res = search_call_schedule(pool, 1, 60, 0.0);
  int defaults = 0;
  for (const auto& e : res.schedule.entries) {
    if (e.kind == CallEntry::Kind::Default) ++defaults;
  }
  CHECK(defaults >= 6);
}

TEST_CASE("mlevp fires when the prediction crosses the cutoff") {
  NetworkSpec net = small_net();
  // prediction = 0.4 + 0.3 * tau: 0.4, 0.7, 1.0 -> crosses 0.9 at tau = 2
  CorridorPolicy policy;
  for (std::size_t i = 1; i < net.size(); ++i) {
    TrainedModel m = make_constant_model(net.intersections[i].id, 0.0, SoftLabelParams{});
    LinearModel lm;
    lm.w = Eigen::VectorXd::Zero(kFeatureCount);
    lm.w[0] = 0.3;  // tau_s feature
    lm.b = 0.4;
    m.regressor = lm;
    m.params.cutoff = 0.9;
    policy.models.push_back(std::move(m));
  }
  MlevpStrategy strat(net, &policy);
  RunResult run = run_scenario(net, net.demand, 3, 310.0, strat);
  for (std::size_t i = 1; i < net.size(); ++i) {
    REQUIRE(run.intersections[i].call_time_s.has_value());
    CHECK(*run.intersections[i].call_time_s == 312.0);  // entry 310 + tau 2
  }
}

TEST_CASE("mlevp with a constant-zero model degenerates to cico") {
  NetworkSpec net = small_net();
  CorridorPolicy zeros;
  for (std::size_t i = 1; i < net.size(); ++i) {
    zeros.models.push_back(
        make_constant_model(net.intersections[i].id, 0.0, SoftLabelParams{}));
  }
  MlevpStrategy mlevp(net, &zeros);
  CiCoStrategy cico;
  RunResult a = run_scenario(net, net.demand, 4, 315.0, mlevp);
  RunResult b = run_scenario(net, net.demand, 4, 315.0, cico);
  for (std::size_t i = 0; i < net.size(); ++i) {
    REQUIRE(a.intersections[i].call_time_s.has_value());
    REQUIRE(b.intersections[i].call_time_s.has_value());
    CHECK(*a.intersections[i].call_time_s == *b.intersections[i].call_time_s);
  }
}

TEST_CASE("mlevp requires a model per downstream intersection") {
  NetworkSpec net = small_net();
  CorridorPolicy partial;
  partial.models.push_back(make_constant_model(net.intersections[1].id, 0.0, SoftLabelParams{}));
  CHECK_THROWS_AS(MlevpStrategy(net, &partial), DataError);
}

TEST_CASE("strategy names round-trip") {
  for (const char* name : {"noevp", "cico", "dp", "optimal", "ideal", "mlevp"}) {
    CHECK(std::string(to_string(strategy_kind_from_string(name))) == name);
  }
  CHECK_THROWS_AS((void)strategy_kind_from_string("bogus"), DataError);
}
