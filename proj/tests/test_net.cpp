#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "evplab/net.hpp"
#include "evplab/common.hpp"

using namespace evplab;

TEST_CASE("default testbed matches the documented corridor") {
  NetworkSpec net = default_testbed();
  REQUIRE(net.size() == 8);

  const double want[] = {2000, 2500, 3000, 1500, 2200, 2800, 2600};
  for (std::size_t i = 1; i < net.size(); ++i) {
    double spacing = net.intersections[i].position_ft - net.intersections[i - 1].position_ft;
    CHECK(spacing == doctest::Approx(want[i - 1]));
    CHECK(spacing <= 3000.0);
  }
  for (const auto& x : net.intersections) {
    CHECK(x.signal.cycle_s == 160.0);
    CHECK(x.advance_detector_setback_ft == 350.0);
    CHECK(x.checkin_setback_ft == 1000.0);
  }
  CHECK(net.demand.mainline_vph == 900.0);
  CHECK(net.demand.cross_vph == 400.0);
  CHECK(net.mainline_free_speed_mph == 45.0);
  CHECK(net.erv_desired_speed_mph == 50.0);
  CHECK(net.erv_caution_speed_mph == 20.0);
  CHECK(validate(net).empty());
}

TEST_CASE("serialize/load round-trips") {
  NetworkSpec net = default_testbed();
  net.intersections[3].cross_demand_vph = 512.0;
  net.demand.warmup_s = 450.0;

  NetworkSpec back = load_network(serialize_network(net));
  REQUIRE(back.size() == net.size());
  for (std::size_t i = 0; i < net.size(); ++i) {
    CHECK(back.intersections[i].id == net.intersections[i].id);
    CHECK(back.intersections[i].position_ft == net.intersections[i].position_ft);
    CHECK(back.intersections[i].cross_demand_vph == net.intersections[i].cross_demand_vph);
    CHECK(back.intersections[i].signal.offset_s == net.intersections[i].signal.offset_s);
  }
  CHECK(back.demand.warmup_s == 450.0);
  // a second round trip is byte-identical
  CHECK(serialize_network(back) == serialize_network(net));
}

TEST_CASE("spacing above 3000 ft is rejected") {
  NetworkSpec net = default_testbed();
  net.intersections[2].position_ft = net.intersections[1].position_ft + 3500.0;
  // keep order for the rest
  for (std::size_t i = 3; i < net.size(); ++i) {
    net.intersections[i].position_ft += 1000.0;
  }
  auto violations = validate(net);
  REQUIRE(!violations.empty());
  bool mentions_spacing = false;
  for (const auto& v : violations) {
    if (v.find("spacing") != std::string::npos) mentions_spacing = true;
  }
  CHECK(mentions_spacing);

  CHECK_THROWS_AS((void)load_network(serialize_network(net)), ConfigError);
}

TEST_CASE("empty intersections list is a schema error") {
  CHECK_THROWS_AS(
      (void)load_network(R"({"intersections": [], "demand": {"mainline_vph": 900,
        "cross_vph": 400, "warmup_s": 900}, "speeds": {"mainline_free_mph": 45,
        "erv_desired_mph": 50, "erv_caution_mph": 20}})"),
      ConfigError);
  CHECK_THROWS_AS((void)load_network("{}"), ConfigError);
  CHECK_THROWS_AS((void)load_network("not json"), ConfigError);
}

TEST_CASE("missing keys are named") {
  try {
    (void)load_network(R"({"intersections": [{"id": "a"}], "demand": {"mainline_vph": 900,
      "cross_vph": 400, "warmup_s": 900}, "speeds": {"mainline_free_mph": 45,
      "erv_desired_mph": 50, "erv_caution_mph": 20}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("position_ft") != std::string::npos);
  }
}

TEST_CASE("validate names the rule and intersection") {
  NetworkSpec net = default_testbed();

  SUBCASE("cycle sum mismatch") {
    net.intersections[4].signal.cross_green_s = 50.0;  // breaks the 160 s sum
    auto v = validate(net);
    REQUIRE(!v.empty());
    bool found = false;
    for (const auto& msg : v) {
      if (msg.find("cycle sum mismatch") != std::string::npos &&
          msg.find(net.intersections[4].id) != std::string::npos) {
        found = true;
      }
    }
    CHECK(found);
  }

  SUBCASE("detector setback outside 200-500 ft") {
    net.intersections[0].advance_detector_setback_ft = 100.0;
    auto v = validate(net);
    REQUIRE(!v.empty());
    CHECK(v.front().find("advance detector outside 200-500 ft") != std::string::npos);
  }

  SUBCASE("speed ordering") {
    net.erv_caution_speed_mph = 60.0;
    auto v = validate(net);
    REQUIRE(!v.empty());
  }
}

TEST_CASE("validate is pure") {
  NetworkSpec net = default_testbed();
  net.intersections[0].advance_detector_setback_ft = 150.0;
  auto a = validate(net);
  auto b = validate(net);
  CHECK(a == b);
}

TEST_CASE("unit conversions") {
  CHECK(mph_to_fps(45.0) == doctest::Approx(66.0));
  CHECK(fps_to_mph(mph_to_fps(50.0)) == doctest::Approx(50.0));
}
