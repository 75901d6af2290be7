#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <functional>

#include "evplab/common.hpp"
#include "evplab/control.hpp"

using namespace evplab;

namespace {

SignalPlan test_plan() {
  SignalPlan p;
  p.cycle_s = 160;
  p.offset_s = 0;
  p.mainline_green_s = 96;
  p.cross_green_s = 52;
  p.yellow_s = 4;
  p.all_red_s = 2;
  p.min_green_s = 10;
  return p;
}

// drives one controller and logs phase-color changes the way the scenario
// engine does, so check_signal_safety can audit the run
EventLog drive(Controller& ctrl, long t_end, const std::function<bool(long)>& request) {
  EventLog log;
  Indications prev{};
  bool first = true;
  for (long t = 0; t < t_end; ++t) {
    Indications ind = ctrl.tick(t, request(t));
    auto mode = static_cast<std::int16_t>(ctrl.mode());
    if (first || ind.mainline != prev.mainline) {
      log.push({static_cast<double>(t), EventKind::Signal, 0, -1, 0,
                static_cast<std::int16_t>(ind.mainline), mode, 0.0});
    }
    if (first || ind.cross != prev.cross) {
      log.push({static_cast<double>(t), EventKind::Signal, 0, -1, 1,
                static_cast<std::int16_t>(ind.cross), mode, 0.0});
    }
    prev = ind;
    first = false;
  }
  return log;
}

NetworkSpec one_intersection_net() {
  NetworkSpec net;
  IntersectionSpec x;
  x.id = "solo";
  x.position_ft = 2000;
  x.signal = test_plan();
  net.intersections.push_back(x);
  return net;
}

}  // namespace

TEST_CASE("normal operation follows the background pattern") {
  Controller ctrl(0, test_plan());
  // cycle: main G [0,96) Y [96,100) AR [100,102) cross G [102,154) Y [154,158) AR [158,160)
  struct Want {
    long t;
    Color main, cross;
  };
  const Want wants[] = {
      {0, Color::Green, Color::Red},    {95, Color::Green, Color::Red},
      {96, Color::Yellow, Color::Red},  {99, Color::Yellow, Color::Red},
      {100, Color::Red, Color::Red},    {102, Color::Red, Color::Green},
      {153, Color::Red, Color::Green},  {154, Color::Red, Color::Yellow},
      {158, Color::Red, Color::Red},    {160, Color::Green, Color::Red},
  };
  long t = 0;
  for (const Want& w : wants) {
    Indications ind{};
    while (t <= w.t) ind = ctrl.tick(t++, false);
    CHECK(ind.mainline == w.main);
    CHECK(ind.cross == w.cross);
  }
}

TEST_CASE("offset shifts the cycle") {
  SignalPlan p = test_plan();
  p.offset_s = 31;
  Controller ctrl(0, p);
  Indications ind = ctrl.tick(0, false);
  // cycle position at t=0 is 129 -> cross green
  CHECK(ind.cross == Color::Green);
  CHECK(ctrl.cycle_clock(0) == 129);
  CHECK(ctrl.cycle_clock(31) == 0);
}

TEST_CASE("request during mainline green dwells the same second") {
  Controller ctrl(0, test_plan());
  for (long t = 0; t < 40; ++t) ctrl.tick(t, false);
  Indications ind = ctrl.tick(40, true);
  CHECK(ind.mainline == Color::Green);
  CHECK(ctrl.mode() == ControlMode::PreemptDwell);
}

TEST_CASE("request one second into mainline yellow keeps the full yellow") {
  Controller ctrl(0, test_plan());
  for (long t = 0; t < 97; ++t) ctrl.tick(t, false);  // yellow began at 96
  long yellow_seconds = 1;                            // second 96 already served
  long t = 97;
  Indications ind = ctrl.tick(t++, true);
  while (ind.mainline == Color::Yellow) {
    ++yellow_seconds;
    ind = ctrl.tick(t++, true);
  }
  CHECK(yellow_seconds == 4);
  // then the full all-red before the preempt green
  long allred = 0;
  while (ind.mainline == Color::Red) {
    ++allred;
    ind = ctrl.tick(t++, true);
  }
  CHECK(allred == 2);
  CHECK(ind.mainline == Color::Green);
  CHECK(ctrl.mode() == ControlMode::PreemptDwell);
}

TEST_CASE("request 5 s into cross green: mainline green 11 s after request") {
  Controller ctrl(0, test_plan());
  for (long t = 0; t < 107; ++t) ctrl.tick(t, false);  // cross green began at 102
  // request lands at t=107, elapsed cross green = 5
  long t = 107;
  Indications ind = ctrl.tick(t, true);
  CHECK(ind.cross == Color::Green);
  long first_main_green = -1;
  for (long k = 1; k <= 20; ++k) {
    ind = ctrl.tick(107 + k, true);
    if (ind.mainline == Color::Green) {
      first_main_green = 107 + k;
      break;
    }
  }
  // remaining min green 5, then yellow 4 and all-red 2
  CHECK(first_main_green == 107 + 11);
}

TEST_CASE("held request reaches mainline green within min_green + yellow + all_red") {
  SignalPlan p = test_plan();
  const long bound = 10 + 4 + 2;
  for (long start = 0; start < 160; ++start) {
    Controller ctrl(0, p);
    for (long t = 0; t < start; ++t) ctrl.tick(t, false);
    long waited = -1;
    for (long k = 0; k <= bound; ++k) {
      Indications ind = ctrl.tick(start + k, true);
      if (ind.mainline == Color::Green) {
        waited = k;
        break;
      }
    }
    REQUIRE(waited >= 0);
    CHECK(waited <= bound);
  }
}

TEST_CASE("release while background shows mainline green returns to Normal at once") {
  Controller ctrl(0, test_plan());
  for (long t = 0; t < 40; ++t) ctrl.tick(t, false);
  for (long t = 40; t < 60; ++t) ctrl.tick(t, true);  // dwell inside bg main green
  Indications ind = ctrl.tick(60, false);
  CHECK(ctrl.mode() == ControlMode::Normal);
  CHECK(ind.mainline == Color::Green);
}

TEST_CASE("release while background shows cross green serves clearances then cross green") {
  Controller ctrl(0, test_plan());
  for (long t = 0; t < 40; ++t) ctrl.tick(t, false);
  for (long t = 40; t < 110; ++t) ctrl.tick(t, true);  // dwell across bg cross-green start
  // release at 110; bg position 110 is cross green
  long t = 110;
  Indications ind = ctrl.tick(t++, false);
  CHECK(ctrl.mode() == ControlMode::PreemptExit);
  long yellow = 0;
  while (ind.mainline == Color::Yellow) {
    ++yellow;
    ind = ctrl.tick(t++, false);
  }
  CHECK(yellow == 4);
  long allred = 0;
  while (ind.mainline == Color::Red && ind.cross == Color::Red) {
    ++allred;
    ind = ctrl.tick(t++, false);
  }
  CHECK(allred == 2);
  CHECK(ind.cross == Color::Green);
}

TEST_CASE("release_preempt outside dwell errors; double release errors") {
  Controller ctrl(0, test_plan());
  ctrl.tick(0, false);
  CHECK_THROWS_AS(ctrl.release_preempt(1), SimError);

  for (long t = 1; t < 50; ++t) ctrl.tick(t, true);
  REQUIRE(ctrl.mode() == ControlMode::PreemptDwell);
  ctrl.release_preempt(50);
  CHECK(ctrl.mode() != ControlMode::PreemptDwell);
  CHECK_THROWS_AS(ctrl.release_preempt(51), SimError);
}

TEST_CASE("short preempt still serves min green before exit clearances") {
  Controller ctrl(0, test_plan());
  // request lands in cross green so the dwell green starts fresh
  for (long t = 0; t < 110; ++t) ctrl.tick(t, false);
  long t = 110;
  Indications ind{};
  while (true) {
    ind = ctrl.tick(t++, true);
    if (ind.mainline == Color::Green) break;
  }
  long green_started = t - 1;
  // drop the request after only 4 s of preempt green (1 already served)
  long green = 4;
  for (long k = 0; k < 3; ++k) ctrl.tick(t++, true);
  while (true) {
    ind = ctrl.tick(t++, false);
    if (ind.mainline != Color::Green) break;
    ++green;
  }
  CHECK(green >= 10);
  CHECK(t - 1 - green_started == green);
  CHECK(ind.mainline == Color::Yellow);
}

TEST_CASE("cycle clock runs through preemption") {
  Controller ctrl(0, test_plan());
  for (long t = 0; t < 40; ++t) ctrl.tick(t, false);
  for (long t = 40; t < 200; ++t) ctrl.tick(t, true);
  CHECK(ctrl.cycle_clock(200) == 200 % 160);
}

TEST_CASE("safety: randomized request patterns never shorten clearances or min greens") {
  NetworkSpec net = one_intersection_net();
  RandomStream rng(99);
  for (int trial = 0; trial < 12; ++trial) {
    SignalPlan p = test_plan();
    p.offset_s = static_cast<double>(trial * 13 % 160);
    Controller ctrl(0, p);
    net.intersections[0].signal = p;

    // random held-request bursts
    long burst_start = 200 + static_cast<long>(rng.next_u64() % 400);
    long burst_len = 5 + static_cast<long>(rng.next_u64() % 220);
    long burst2_start = burst_start + burst_len + 30 + static_cast<long>(rng.next_u64() % 200);
    long burst2_len = 5 + static_cast<long>(rng.next_u64() % 120);
    auto request = [&](long t) {
      return (t >= burst_start && t < burst_start + burst_len) ||
             (t >= burst2_start && t < burst2_start + burst2_len);
    };
    EventLog log = drive(ctrl, 1600, request);
    auto violations = check_signal_safety(log, net);
    if (!violations.empty()) {
      CAPTURE(trial);
      CAPTURE(burst_start);
      CAPTURE(burst_len);
      CAPTURE(burst2_start);
      CAPTURE(burst2_len);
      for (const auto& v : violations) MESSAGE(v);
    }
    CHECK(violations.empty());
  }
}

TEST_CASE("conflicting greens never overlap under random requests") {
  RandomStream rng(7);
  SignalPlan p = test_plan();
  Controller ctrl(0, p);
  bool req = false;
  for (long t = 0; t < 2000; ++t) {
    if (rng.uniform01() < 0.02) req = !req;
    Indications ind = ctrl.tick(t, req);
    CHECK(!(ind.mainline != Color::Red && ind.cross != Color::Red));
  }
}
