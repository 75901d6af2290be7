#include "evplab/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"

namespace evplab {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool can_stop(double speed_fps, double gap_ft) {
  return gap_ft >= speed_fps * speed_fps / (2.0 * kDecelFps2);
}

inline bool whole_second(double t) { return t == std::floor(t); }
}  // namespace

Sim::Sim(const NetworkSpec& net, const DemandSpec& demand, std::uint64_t seed,
         const RunOptions& opts)
    : net_(net), demand_(demand), opts_(opts), seed_(seed) {
  const std::size_t n = net_.size();
  lanes_.resize(1 + n);
  detector_now_.assign(n, 0);
  checkin_cross_.assign(n, -1.0);
  stopbar_cross_.assign(n, -1.0);
  current_ind_.assign(n, Indications{});

  mainline_free_fps_ = mph_to_fps(net_.mainline_free_speed_mph);
  erv_desired_fps_ = mph_to_fps(net_.erv_desired_speed_mph);
  erv_caution_fps_ = mph_to_fps(net_.erv_caution_speed_mph);
  cross_free_fps_ = mph_to_fps(kCrossFreeSpeedMph);
  corridor_end_ft_ = net_.corridor_length_ft();

  arrivals_.resize(1 + n);
  arrivals_[0].rng = RandomStream(substream_seed(seed, 0));
  arrivals_[0].rate_vps = demand_.mainline_vph / kSecondsPerHour;
  if (arrivals_[0].rate_vps > 0) {
    arrivals_[0].next_time = arrivals_[0].rng.exponential(arrivals_[0].rate_vps);
  } else {
    arrivals_[0].next_time = kInf;
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = arrivals_[1 + i];
    s.rng = RandomStream(substream_seed(seed, 1 + i));
    s.rate_vps = net_.intersections[i].cross_demand_vph / kSecondsPerHour;
    s.next_time = s.rate_vps > 0 ? s.rng.exponential(s.rate_vps) : kInf;
  }

  sample_whole_second();
}

bool Sim::lane_entry_clear(int lane) const {
  const auto& q = lanes_[lane];
  return q.empty() || q.back().pos >= kJamSpacingFt + 5.0;
}

// entry speed consistent with the Newell spacing for the available rear gap,
// so entrants start on the following curve instead of being hard-capped
double Sim::entry_speed(int lane, double desired_fps) const {
  const auto& q = lanes_[lane];
  if (q.empty()) return desired_fps;
  double headroom = (q.back().pos - kJamSpacingFt) / 1.5;
  return std::clamp(headroom, 0.0, desired_fps);
}

void Sim::spawn_arrivals() {
  for (std::size_t L = 0; L < arrivals_.size(); ++L) {
    if (L == 0 && hold_mainline_entries_) continue;
    auto& s = arrivals_[L];
    while (s.next_time <= clock_ + 1e-9) {
      if (!lane_entry_clear(static_cast<int>(L))) break;  // retry next substep
      VehicleState v;
      v.id = next_vehicle_id_++;
      v.cls = VehicleClass::General;
      v.lane = static_cast<int>(L);
      v.pos = 0.0;
      v.speed = entry_speed(static_cast<int>(L), L == 0 ? mainline_free_fps_ : cross_free_fps_);
      v.prev_pos_half = v.prev_pos_full = 0.0;
      v.entry_time = clock_;
      v.next_signal = 0;
      lanes_[L].push_back(v);
      records_.push_back({v.id, v.cls, v.lane, clock_, -1.0});
      if (opts_.record_events) {
        events_.push({clock_, EventKind::Vehicle, static_cast<std::int16_t>(L == 0 ? -1 : L - 1),
                      v.id, 1, static_cast<std::int16_t>(v.cls), 0, 0.0});
      }
      s.next_time += s.rng.exponential(s.rate_vps);
    }
  }
}

bool Sim::inject_erv(double entry_time_s) {
  if (erv_injected_) throw SimError("inject_erv: ERV already present");
  if (std::abs(clock_ - entry_time_s) > 1e-9) {
    throw SimError("inject_erv: clock must equal entry time");
  }
  if (!lane_entry_clear(0)) return false;
  VehicleState v;
  v.id = next_vehicle_id_++;
  v.cls = VehicleClass::Erv;
  v.lane = 0;
  v.pos = 0.0;
  v.speed = entry_speed(0, erv_desired_fps_);
  v.prev_pos_half = v.prev_pos_full = 0.0;
  v.entry_time = clock_;
  v.next_signal = 0;
  lanes_[0].push_back(v);
  records_.push_back({v.id, v.cls, 0, clock_, -1.0});
  erv_injected_ = true;
  erv_in_network_ = true;
  erv_entry_s_ = clock_;
  erv_pos_ = 0.0;
  erv_speed_ = v.speed;
  if (opts_.record_events) {
    events_.push({clock_, EventKind::Erv, -1, v.id, 0, 0, 0, 0.0});
  }
  if (opts_.record_trajectory && whole_second(clock_)) {
    trajectory_.push_back({clock_, 0.0, v.speed});
  }
  return true;
}

int Sim::erv_box_intersection() const {
  if (!erv_in_network_) return -1;
  for (std::size_t i = 0; i < net_.size(); ++i) {
    double bar = net_.intersections[i].position_ft;
    if (erv_pos_ >= bar && erv_pos_ <= bar + kBoxLengthFt + kVehicleLengthFt) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

bool Sim::cross_box_clear(int intersection) const {
  const auto& q = lanes_[1 + intersection];
  for (const auto& v : q) {
    if (v.pos >= kCrossApproachFt && v.pos <= kCrossApproachFt + kBoxLengthFt + kVehicleLengthFt) {
      return false;
    }
  }
  return true;
}

void Sim::update_lane(int lane, std::span<const Indications> ind) {
  auto& q = lanes_[lane];
  if (q.empty()) return;
  const bool is_main = lane == 0;
  const int xi = lane - 1;
  const int n = static_cast<int>(net_.size());
  const int erv_box = is_main ? -1 : erv_box_intersection();

  for (std::size_t k = 0; k < q.size(); ++k) {
    VehicleState& v = q[k];

    double vmax;
    if (is_main) {
      if (v.cls == VehicleClass::Erv) {
        vmax = v.caution ? erv_caution_fps_ : erv_desired_fps_;
      } else {
        vmax = mainline_free_fps_;
      }
    } else {
      vmax = cross_free_fps_;
    }

    double cap_pos = kInf;
    if (k > 0) cap_pos = q[k - 1].prev_pos_full - kJamSpacingFt;

    double wall = kInf;
    if (is_main) {
      int ns = v.next_signal;
      if (ns < n) {
        const double bar = net_.intersections[ns].position_ft;
        const Color c = ind[ns].mainline;
        bool active = false;
        if (v.cls == VehicleClass::Erv) {
          // red-stop then caution crossing through a clear box
          if (v.caution && v.pos < v.caution_until_pos) {
            active = false;
          } else if (c == Color::Red) {
            active = true;
            if (v.speed < 0.5 && bar - v.pos <= 6.0) {
              if (v.stopped_since < 0) {
                v.stopped_since = clock_;
              } else if (clock_ - v.stopped_since >= kErvStopDwellS - 1e-9 &&
                         cross_box_clear(ns)) {
                v.caution = true;
                v.caution_until_pos = bar + kBoxLengthFt + kVehicleLengthFt;
                v.stopped_since = -1.0;
                active = false;
                vmax = erv_caution_fps_;
              }
            } else {
              v.stopped_since = -1.0;
            }
          } else {
            v.stopped_since = -1.0;
            if (c == Color::Yellow) active = can_stop(v.speed, bar - v.pos);
          }
        } else {
          if (c == Color::Red) active = true;
          else if (c == Color::Yellow) active = can_stop(v.speed, bar - v.pos);
        }
        if (active) wall = bar;
      }
      if (v.caution && v.pos >= v.caution_until_pos) v.caution = false;
    } else {
      const double bar = kCrossApproachFt;
      if (v.pos < bar) {
        const Color c = ind[xi].cross;
        bool active;
        if (c == Color::Red) active = true;
        else if (c == Color::Yellow) active = can_stop(v.speed, bar - v.pos);
        else active = false;
        if (erv_box == xi) active = true;  // yield to an ERV inside the box
        if (active) wall = bar;
      }
    }

    double v_allow = std::min(vmax, v.speed + kAccelFps2 * kStepS);
    if (wall < kInf) {
      double gap = std::max(0.0, wall - v.pos);
      v_allow = std::min(v_allow, std::sqrt(2.0 * kDecelFps2 * gap));
    }
    double newpos = v.pos + v_allow * kStepS;
    if (newpos > cap_pos) newpos = cap_pos;
    if (wall < kInf && newpos > wall) newpos = wall;
    if (newpos < v.pos) newpos = v.pos;
    v.scratch_new_pos = newpos;
  }
}

void Sim::commit_lane(int lane) {
  auto& q = lanes_[lane];
  const bool is_main = lane == 0;
  const int n = static_cast<int>(net_.size());
  for (auto& v : q) {
    v.prev_pos_full = v.prev_pos_half;
    v.prev_pos_half = v.pos;
    v.speed = (v.scratch_new_pos - v.pos) / kStepS;
    v.pos = v.scratch_new_pos;
    if (is_main) {
      // strictly past the bar: a vehicle held exactly at the wall has not crossed
      while (v.next_signal < n &&
             v.pos > net_.intersections[v.next_signal].position_ft + 1e-9) {
        if (v.cls == VehicleClass::Erv) {
          stopbar_cross_[v.next_signal] = clock_;
          if (opts_.record_events) {
            events_.push({clock_, EventKind::Erv, static_cast<std::int16_t>(v.next_signal), v.id,
                          3, 0, 0, v.pos});
          }
        }
        v.next_signal += 1;
      }
      if (v.cls == VehicleClass::Erv) {
        erv_pos_ = v.pos;
        erv_speed_ = v.speed;
      }
    }
  }
}

void Sim::remove_exited(std::span<const Indications>) {
  // mainline
  auto& main = lanes_[0];
  while (!main.empty() && main.front().pos >= corridor_end_ft_) {
    const VehicleState& v = main.front();
    records_[v.id - 1].exit_s = clock_;
    if (v.cls == VehicleClass::Erv) {
      erv_in_network_ = false;
      erv_exited_ = true;
      erv_exit_s_ = clock_;
      erv_pos_ = corridor_end_ft_;
      erv_speed_ = v.speed;
      if (opts_.record_events) {
        events_.push({clock_, EventKind::Erv, -1, v.id, 1, 0, 0, v.pos});
      }
    } else if (opts_.record_events) {
      events_.push({clock_, EventKind::Vehicle, -1, v.id, 0,
                    static_cast<std::int16_t>(v.cls), 0, v.pos});
    }
    main.pop_front();
  }
  // cross approaches clear once the vehicle is fully past the box
  const double cross_exit = kCrossApproachFt + kBoxLengthFt + kVehicleLengthFt;
  for (std::size_t i = 1; i < lanes_.size(); ++i) {
    auto& q = lanes_[i];
    while (!q.empty() && q.front().pos >= cross_exit) {
      const VehicleState& v = q.front();
      records_[v.id - 1].exit_s = clock_;
      if (opts_.record_events) {
        events_.push({clock_, EventKind::Vehicle, static_cast<std::int16_t>(i - 1), v.id, 0,
                      static_cast<std::int16_t>(v.cls), 0, v.pos});
      }
      q.pop_front();
    }
  }
}

void Sim::sample_whole_second() {
  const long t = std::lround(clock_);
  const int n = static_cast<int>(net_.size());
  std::vector<std::uint8_t> occ(n, 0);
  for (const auto& v : lanes_[0]) {
    int ns = v.next_signal;
    if (ns >= n) continue;
    double det = net_.intersections[ns].detector_position_ft();
    if (v.pos >= det - kDetectorZoneFt && v.pos <= det + kVehicleLengthFt) occ[ns] = 1;
  }
  for (int i = 0; i < n; ++i) {
    detector_now_[i] = occ[i];
    if (opts_.record_events) {
      events_.push({static_cast<double>(t), EventKind::Detector, static_cast<std::int16_t>(i), -1,
                    occ[i], 0, 0, 0.0});
    }
  }
  if (erv_in_network_) {
    for (int i = 0; i < n; ++i) {
      if (checkin_cross_[i] < 0 && erv_pos_ >= net_.intersections[i].checkin_position_ft()) {
        checkin_cross_[i] = static_cast<double>(t);
        if (opts_.record_events) {
          events_.push({static_cast<double>(t), EventKind::Erv, static_cast<std::int16_t>(i), -1,
                        2, 0, 0, erv_pos_});
        }
      }
    }
    if (opts_.record_trajectory) {
      trajectory_.push_back({static_cast<double>(t), erv_pos_, erv_speed_});
    }
  }
}

void Sim::step(std::span<const Indications> indications) {
  if (indications.size() != net_.size()) {
    throw SimError("step: indications must cover every intersection");
  }
  spawn_arrivals();
  for (std::size_t L = 0; L < lanes_.size(); ++L) update_lane(static_cast<int>(L), indications);
  clock_ += kStepS;
  for (std::size_t L = 0; L < lanes_.size(); ++L) commit_lane(static_cast<int>(L));
  remove_exited(indications);
  if (whole_second(clock_)) sample_whole_second();
}

int Sim::vehicles_in_network() const {
  int total = 0;
  for (const auto& q : lanes_) total += static_cast<int>(q.size());
  return total;
}

int Sim::estimate_queue(int intersection, double window_ft) const {
  const double bar = net_.intersections[intersection].position_ft;
  int count = 0;
  for (const auto& v : lanes_[0]) {
    if (v.pos >= bar - window_ft && v.pos <= bar && v.speed < kStoppedSpeedFps) ++count;
  }
  return count;
}

void Sim::place_vehicle_for_test(int lane, double pos, VehicleClass cls) {
  VehicleState v;
  v.id = next_vehicle_id_++;
  v.cls = cls;
  v.lane = lane;
  v.pos = pos;
  v.speed = 0.0;
  v.prev_pos_half = v.prev_pos_full = pos;
  v.entry_time = clock_;
  v.next_signal = 0;
  if (lane == 0) {
    while (v.next_signal < static_cast<int>(net_.size()) &&
           pos >= net_.intersections[v.next_signal].position_ft) {
      v.next_signal += 1;
    }
  }
  auto& q = lanes_[lane];
  auto it = q.begin();
  while (it != q.end() && it->pos > pos) ++it;
  q.insert(it, v);
  records_.push_back({v.id, v.cls, lane, clock_, -1.0});
  if (cls == VehicleClass::Erv) {
    erv_injected_ = erv_in_network_ = true;
    erv_entry_s_ = clock_;
    erv_pos_ = pos;
    erv_speed_ = 0.0;
  }
}

// ---------------------------------------------------------------------------

ScenarioEngine::ScenarioEngine(const NetworkSpec& net, const DemandSpec& demand,
                               std::uint64_t seed, const RunOptions& opts)
    : sim_(net, demand, seed, opts) {
  const int n = static_cast<int>(net.size());
  controllers_.reserve(n);
  for (int i = 0; i < n; ++i) controllers_.emplace_back(i, net.intersections[i].signal);
  indications_.assign(n, Indications{});
  series_.init(n);
  calls_.resize(n);
}

void ScenarioEngine::tick_second(Strategy* policy) {
  const long t = t_;
  const NetworkSpec& net = sim_.net();
  const int n = static_cast<int>(net.size());
  const bool rec = sim_.options().record_events;

  // releases: the call stays active until the ERV crosses the stop-bar
  for (int i = 0; i < n; ++i) {
    if (calls_[i].active && sim_.stopbar_cross_s(i) >= 0) {
      calls_[i].active = false;
      calls_[i].release_t = t;
      if (rec) {
        sim_.events().push({static_cast<double>(t), EventKind::Preempt,
                            static_cast<std::int16_t>(i), -1, 0, calls_[i].source, 0, 0.0});
      }
    }
  }

  // clear the origin ahead of a scheduled ERV injection
  if (pending_entry_s_ >= 0 && !sim_.erv_injected()) {
    sim_.set_mainline_entry_hold(t >= pending_entry_s_ - 10);
    if (t >= pending_entry_s_ && sim_.inject_erv(static_cast<double>(t))) {
      pending_entry_s_ = -1;
      sim_.set_mainline_entry_hold(false);
    }
  }

  // per-second series entering second t (see CorridorSeries)
  for (int i = 0; i < n; ++i) {
    series_.occ[i].push_back(sim_.detector_occupancy(i));
    series_.color[i].push_back(static_cast<std::uint8_t>(indications_[i].mainline));
    series_.preempt[i].push_back(
        (calls_[i].active && calls_[i].fire_t < t) ? std::uint8_t{1} : std::uint8_t{0});
  }

  if (policy && sim_.erv_in_network()) {
    SimView view{t, &net, &sim_, &series_, std::span<const CallState>(calls_)};
    fire_scratch_.clear();
    policy->decide(view, fire_scratch_);
    for (int i : fire_scratch_) {
      auto& c = calls_[i];
      if (c.fired || sim_.stopbar_cross_s(i) >= 0) continue;
      c.fired = true;
      c.fire_t = t;
      c.active = true;
      c.source = static_cast<std::int16_t>(policy->source_tag());
      if (rec) {
        sim_.events().push({static_cast<double>(t), EventKind::Preempt,
                            static_cast<std::int16_t>(i), -1, 1, c.source, 0, 0.0});
      }
    }
  }

  for (int i = 0; i < n; ++i) {
    Indications next = controllers_[i].tick(t, calls_[i].active);
    if (rec) {
      const auto mode = static_cast<std::int16_t>(controllers_[i].mode());
      if (!logged_initial_colors_ || next.mainline != indications_[i].mainline) {
        sim_.events().push({static_cast<double>(t), EventKind::Signal,
                            static_cast<std::int16_t>(i), -1, 0,
                            static_cast<std::int16_t>(next.mainline), mode, 0.0});
      }
      if (!logged_initial_colors_ || next.cross != indications_[i].cross) {
        sim_.events().push({static_cast<double>(t), EventKind::Signal,
                            static_cast<std::int16_t>(i), -1, 1,
                            static_cast<std::int16_t>(next.cross), mode, 0.0});
      }
    }
    indications_[i] = next;
  }
  logged_initial_colors_ = true;

  sim_.step(indications_);
  sim_.step(indications_);
  t_ += 1;
}

void ScenarioEngine::advance_to(long t_target, Strategy* policy) {
  while (t_ < t_target) tick_second(policy);
}

RunResult ScenarioEngine::finish(std::uint64_t seed) const {
  RunResult r;
  r.seed = seed;
  r.erv_entry_s = sim_.erv_entry_time();
  r.erv_exit_s = sim_.erv_exit_time();
  const int n = static_cast<int>(sim_.net().size());
  r.intersections.resize(n);
  for (int i = 0; i < n; ++i) {
    auto& out = r.intersections[i];
    const CallState& c = calls_[i];
    if (c.fired) {
      out.call_time_s = static_cast<double>(c.fire_t);
      long release = c.release_t >= 0 ? c.release_t : t_;
      out.preempt_duration_s = static_cast<double>(release - c.fire_t);
    }
    if (sim_.checkin_cross_s(i) >= 0) out.checkin_cross_s = sim_.checkin_cross_s(i);
    if (sim_.stopbar_cross_s(i) >= 0) out.stopbar_cross_s = sim_.stopbar_cross_s(i);
  }
  r.erv_trajectory = sim_.erv_trajectory();
  r.vehicles = sim_.vehicle_records();
  r.events = sim_.events();
  return r;
}

RunResult continue_scenario(ScenarioEngine engine, long erv_entry_s, Strategy& policy,
                            int stop_after_intersection) {
  policy.reset();
  if (engine.now() > erv_entry_s) {
    throw DataError("continue_scenario: engine already past the ERV entry second");
  }
  engine.request_erv_injection(erv_entry_s);
  engine.advance_to(erv_entry_s, nullptr);
  const RunOptions& opts = engine.sim().options();
  const int stop_after =
      stop_after_intersection >= 0 ? stop_after_intersection : opts.stop_after_intersection;
  for (;;) {
    engine.tick_second(&policy);
    const Sim& s = engine.sim();
    if (stop_after >= 0 && s.stopbar_cross_s(stop_after) >= 0) {
      break;
    }
    if (s.erv_exited() &&
        engine.now() >= std::lround(s.erv_exit_time() + opts.post_exit_s)) {
      break;
    }
    if (engine.now() >= static_cast<long>(opts.max_sim_s)) {
      throw SimError("run exceeded the max_sim_s non-termination guard");
    }
  }
  return engine.finish(engine.sim().seed());
}

RunResult run_scenario(const NetworkSpec& net, const DemandSpec& demand, std::uint64_t seed,
                       double erv_entry_s, Strategy& policy, const RunOptions& opts) {
  if (erv_entry_s < demand.warmup_s) {
    throw DataError("run_scenario: erv_entry_s must be >= warmup_s");
  }
  ScenarioEngine engine(net, demand, seed, opts);
  return continue_scenario(std::move(engine), std::lround(erv_entry_s), policy);
}

// ---------------------------------------------------------------------------

std::string RunResult::to_json(const NetworkSpec& net) const {
  nlohmann::json doc;
  doc["seed"] = seed;
  doc["erv_entry_s"] = erv_entry_s;
  doc["erv_exit_s"] = erv_exit_s;
  doc["erv_travel_time_s"] = erv_travel_time_s();
  nlohmann::json xs = nlohmann::json::array();
  for (std::size_t i = 0; i < intersections.size(); ++i) {
    const auto& o = intersections[i];
    nlohmann::json jx;
    jx["id"] = net.intersections[i].id;
    if (o.call_time_s) jx["call_time_s"] = *o.call_time_s;
    else jx["call_time_s"] = nullptr;
    if (o.checkin_cross_s) jx["checkin_cross_s"] = *o.checkin_cross_s;
    if (o.stopbar_cross_s) jx["stopbar_cross_s"] = *o.stopbar_cross_s;
    jx["preempt_duration_s"] = o.preempt_duration_s;
    xs.push_back(std::move(jx));
  }
  doc["intersections"] = std::move(xs);
  int entered = 0, exited = 0;
  for (const auto& v : vehicles) {
    ++entered;
    if (v.exit_s >= 0) ++exited;
  }
  doc["vehicles"] = {{"entered", entered}, {"exited", exited}};
  return doc.dump(2) + "\n";
}

std::string RunResult::trajectory_csv() const {
  std::string out = "t,position_ft,speed_fps\n";
  char buf[96];
  for (const auto& row : erv_trajectory) {
    std::snprintf(buf, sizeof(buf), "%.1f,%.2f,%.3f\n", row[0], row[1], row[2]);
    out += buf;
  }
  return out;
}

}  // namespace evplab
