#include "evplab/control.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "evplab/common.hpp"

namespace evplab {

Controller::Controller(int intersection_index, const SignalPlan& plan)
    : index_(intersection_index), plan_(plan) {
  auto sec = [](double v) { return static_cast<long>(std::llround(v)); };
  cycle_ = sec(plan.cycle_s);
  offset_ = sec(plan.offset_s);
  main_g_ = sec(plan.mainline_green_s);
  cross_g_ = sec(plan.cross_green_s);
  yellow_ = sec(plan.yellow_s);
  all_red_ = sec(plan.all_red_s);
  min_green_ = sec(plan.min_green_s);
}

long Controller::cycle_clock(long t) const {
  long c = (t - offset_) % cycle_;
  return c < 0 ? c + cycle_ : c;
}

Controller::BgState Controller::background(long t) const {
  long c = cycle_clock(t);
  long b0 = main_g_;
  long b1 = b0 + yellow_;
  long b2 = b1 + all_red_;
  long b3 = b2 + cross_g_;
  long b4 = b3 + yellow_;
  if (c < b0) return {IntervalKind::MainGreen, c, b0 - c};
  if (c < b1) return {IntervalKind::MainYellow, c - b0, b1 - c};
  if (c < b2) return {IntervalKind::AllRed, c - b1, b2 - c};
  if (c < b3) return {IntervalKind::CrossGreen, c - b2, b3 - c};
  if (c < b4) return {IntervalKind::CrossYellow, c - b3, b4 - c};
  return {IntervalKind::AllRed, c - b4, cycle_ - c};
}

long Controller::seconds_to_main_green(long t) const {
  long c = cycle_clock(t);
  return (cycle_ - c) % cycle_;
}

Indications Controller::serve(IntervalKind kind) {
  switch (kind) {
    case IntervalKind::MainGreen: return {Color::Green, Color::Red};
    case IntervalKind::MainYellow: return {Color::Yellow, Color::Red};
    case IntervalKind::CrossGreen: return {Color::Red, Color::Green};
    case IntervalKind::CrossYellow: return {Color::Red, Color::Yellow};
    case IntervalKind::AllRed: return {Color::Red, Color::Red};
  }
  return {Color::Red, Color::Red};
}

void Controller::begin_entry(long t) {
  BgState bg = background(t);
  pipeline_.clear();
  switch (bg.kind) {
    case IntervalKind::MainGreen:
      mode_ = ControlMode::PreemptDwell;
      return;
    case IntervalKind::MainYellow:
      pipeline_.push_back({IntervalKind::MainYellow, bg.remaining});
      pipeline_.push_back({IntervalKind::AllRed, all_red_});
      break;
    case IntervalKind::AllRed:
      pipeline_.push_back({IntervalKind::AllRed, bg.remaining});
      break;
    case IntervalKind::CrossGreen:
      begin_entry_from_serving(IntervalKind::CrossGreen, bg.remaining, bg.elapsed);
      return;
    case IntervalKind::CrossYellow:
      pipeline_.push_back({IntervalKind::CrossYellow, bg.remaining});
      pipeline_.push_back({IntervalKind::AllRed, all_red_});
      break;
  }
  mode_ = ControlMode::PreemptEntry;
}

// Builds the entry pipeline out of an interval already being displayed.
// green_elapsed is only meaningful for CrossGreen.
void Controller::begin_entry_from_serving(IntervalKind kind, long remaining, long green_elapsed) {
  pipeline_.clear();
  switch (kind) {
    case IntervalKind::MainGreen:
      mode_ = ControlMode::PreemptDwell;
      return;
    case IntervalKind::CrossGreen: {
      long rem_min = std::max(0L, min_green_ - green_elapsed);
      if (rem_min > 0) pipeline_.push_back({IntervalKind::CrossGreen, rem_min});
      pipeline_.push_back({IntervalKind::CrossYellow, yellow_});
      pipeline_.push_back({IntervalKind::AllRed, all_red_});
      break;
    }
    case IntervalKind::MainYellow:
      pipeline_.push_back({IntervalKind::MainYellow, remaining});
      pipeline_.push_back({IntervalKind::AllRed, all_red_});
      break;
    case IntervalKind::CrossYellow:
      pipeline_.push_back({IntervalKind::CrossYellow, remaining});
      pipeline_.push_back({IntervalKind::AllRed, all_red_});
      break;
    case IntervalKind::AllRed:
      pipeline_.push_back({IntervalKind::AllRed, remaining});
      break;
  }
  mode_ = ControlMode::PreemptEntry;
}

void Controller::do_release(long t) {
  if (mode_ != ControlMode::PreemptDwell) {
    throw SimError("release_preempt: controller not in preempt dwell");
  }
  long elapsed = main_green_since_ >= 0 ? t - main_green_since_ : 0;
  if (elapsed < min_green_) {
    mode_ = ControlMode::PreemptExit;
    exit_stage_ = ExitStage::ExtendGreen;
    extend_green_until_ = (main_green_since_ >= 0 ? main_green_since_ : t) + min_green_;
    return;
  }
  BgState bg = background(t);
  if (bg.kind == IntervalKind::MainGreen) {
    mode_ = ControlMode::Normal;
    exit_stage_ = ExitStage::None;
    return;
  }
  mode_ = ControlMode::PreemptExit;
  exit_stage_ = ExitStage::Clearance;
  pipeline_.clear();
  pipeline_.push_back({IntervalKind::MainYellow, yellow_});
  pipeline_.push_back({IntervalKind::AllRed, all_red_});
}

void Controller::release_preempt(long t) { do_release(t); }

Indications Controller::step_pipeline_or_dwell(long) {
  while (!pipeline_.empty() && pipeline_.front().seconds <= 0) pipeline_.pop_front();
  if (pipeline_.empty()) {
    mode_ = ControlMode::PreemptDwell;
    return serve(IntervalKind::MainGreen);
  }
  pipeline_.front().seconds -= 1;
  return serve(pipeline_.front().kind);
}

Indications Controller::tick(long t, bool request_active) {
  Indications prev = current_;
  Indications out{};
  bool decided = false;

  while (!decided) {
    switch (mode_) {
      case ControlMode::Normal: {
        if (request_active) {
          begin_entry(t);
          continue;  // re-dispatch in the new mode
        }
        BgState bg = background(t);
        out = serve(bg.kind);
        decided = true;
        break;
      }
      case ControlMode::PreemptEntry: {
        // entry clearances complete at full length even if the call drops
        out = step_pipeline_or_dwell(t);
        decided = true;
        break;
      }
      case ControlMode::PreemptDwell: {
        if (!request_active) {
          do_release(t);
          continue;
        }
        out = serve(IntervalKind::MainGreen);
        decided = true;
        break;
      }
      case ControlMode::PreemptExit: {
        if (request_active) {
          // a new call arrived mid-exit; fold the current display into an entry
          switch (exit_stage_) {
            case ExitStage::ExtendGreen:
              mode_ = ControlMode::PreemptDwell;
              break;
            case ExitStage::Clearance:
            case ExitStage::CrossClear:
              mode_ = ControlMode::PreemptEntry;  // pipeline already ends in all-red
              break;
            case ExitStage::CrossHold:
              begin_entry_from_serving(IntervalKind::CrossGreen, 0, t - cross_hold_since_);
              break;
            case ExitStage::None:
              mode_ = ControlMode::Normal;
              break;
          }
          exit_stage_ = ExitStage::None;
          continue;
        }
        switch (exit_stage_) {
          case ExitStage::ExtendGreen: {
            if (t < extend_green_until_) {
              out = serve(IntervalKind::MainGreen);
              decided = true;
              break;
            }
            BgState bg = background(t);
            if (bg.kind == IntervalKind::MainGreen) {
              mode_ = ControlMode::Normal;
              exit_stage_ = ExitStage::None;
              continue;
            }
            exit_stage_ = ExitStage::Clearance;
            pipeline_.clear();
            pipeline_.push_back({IntervalKind::MainYellow, yellow_});
            pipeline_.push_back({IntervalKind::AllRed, all_red_});
            continue;
          }
          case ExitStage::Clearance: {
            while (!pipeline_.empty() && pipeline_.front().seconds <= 0) pipeline_.pop_front();
            if (pipeline_.empty()) {
              exit_stage_ = ExitStage::CrossHold;
              cross_hold_since_ = t;
              continue;
            }
            pipeline_.front().seconds -= 1;
            out = serve(pipeline_.front().kind);
            decided = true;
            break;
          }
          case ExitStage::CrossHold: {
            long held = t - cross_hold_since_;
            BgState bg = background(t);
            if (bg.kind == IntervalKind::CrossGreen && held + bg.remaining >= min_green_) {
              // adopt the background cross green seamlessly
              mode_ = ControlMode::Normal;
              exit_stage_ = ExitStage::None;
              out = serve(IntervalKind::CrossGreen);
              decided = true;
              break;
            }
            if (held >= min_green_ && seconds_to_main_green(t) == yellow_ + all_red_) {
              exit_stage_ = ExitStage::CrossClear;
              pipeline_.clear();
              pipeline_.push_back({IntervalKind::CrossYellow, yellow_});
              pipeline_.push_back({IntervalKind::AllRed, all_red_});
              continue;
            }
            out = serve(IntervalKind::CrossGreen);
            decided = true;
            break;
          }
          case ExitStage::CrossClear: {
            while (!pipeline_.empty() && pipeline_.front().seconds <= 0) pipeline_.pop_front();
            if (pipeline_.empty()) {
              // aligned with the background main green start
              mode_ = ControlMode::Normal;
              exit_stage_ = ExitStage::None;
              continue;
            }
            pipeline_.front().seconds -= 1;
            out = serve(pipeline_.front().kind);
            decided = true;
            break;
          }
          case ExitStage::None:
            mode_ = ControlMode::Normal;
            continue;
        }
        break;
      }
    }
  }

  if (out.mainline == Color::Green && (!started_ || prev.mainline != Color::Green)) {
    main_green_since_ = t;
  }
  if (!started_ || !(out == prev)) {
    interval_elapsed_ = 1;
  } else {
    interval_elapsed_ += 1;
  }
  started_ = true;
  current_ = out;
  return out;
}

std::vector<std::string> check_signal_safety(const EventLog& log, const NetworkSpec& net) {
  struct Change {
    long t;
    int phase;
    Color color;
  };
  std::map<int, std::vector<Change>> changes;
  long log_end = 0;
  for (const Event& e : log.events) {
    log_end = std::max(log_end, static_cast<long>(e.t));
    if (e.kind != EventKind::Signal) continue;
    changes[e.intersection].push_back(
        {static_cast<long>(e.t), e.a, static_cast<Color>(e.b)});
  }

  struct Segment {
    Color color;
    long start;
    long end;  // exclusive
  };
  std::vector<std::string> violations;

  for (auto& [idx, evs] : changes) {
    if (idx < 0 || idx >= static_cast<int>(net.size())) continue;
    const SignalPlan& plan = net.intersections[idx].signal;
    const std::string& name = net.intersections[idx].id;

    // per-second color samples for both phases (changes land on ticks)
    std::vector<Color> main(log_end + 1, Color::Red), cross(log_end + 1, Color::Red);
    {
      Color cm = Color::Red, cc = Color::Red;
      std::size_t k = 0;
      for (long t = 0; t <= log_end; ++t) {
        while (k < evs.size() && evs[k].t <= t) {
          if (evs[k].phase == 0) cm = evs[k].color;
          else cc = evs[k].color;
          ++k;
        }
        main[t] = cm;
        cross[t] = cc;
      }
    }

    auto segments = [&](auto pick) {
      std::vector<Segment> out;
      long start = 0;
      for (long t = 1; t <= log_end; ++t) {
        if (pick(t) != pick(start)) {
          out.push_back({pick(start), start, t});
          start = t;
        }
      }
      out.push_back({pick(start), start, log_end + 1});
      return out;
    };

    auto check_phase = [&](const std::vector<Segment>& segs, const char* phase_name) {
      for (std::size_t k = 1; k + 1 < segs.size(); ++k) {  // skip truncated edges
        const Segment& s = segs[k];
        long dur = s.end - s.start;
        if (s.color == Color::Yellow && dur != static_cast<long>(plan.yellow_s)) {
          violations.push_back(name + ": " + phase_name + " yellow of " + std::to_string(dur) +
                               " s (plan " + std::to_string(static_cast<long>(plan.yellow_s)) + ")");
        }
        if (s.color == Color::Green && dur < static_cast<long>(plan.min_green_s)) {
          violations.push_back(name + ": " + phase_name + " green of " + std::to_string(dur) +
                               " s below min green");
        }
      }
    };
    check_phase(segments([&](long t) { return main[t]; }), "mainline");
    check_phase(segments([&](long t) { return cross[t]; }), "cross");

    // conflicting greens and all-red durations
    auto both = segments([&](long t) -> Color {
      return (main[t] == Color::Red && cross[t] == Color::Red) ? Color::Red : Color::Green;
    });
    for (long t = 0; t <= log_end; ++t) {
      if (main[t] != Color::Red && cross[t] != Color::Red) {
        violations.push_back(name + ": conflicting non-red indications at t=" + std::to_string(t));
        break;
      }
    }
    for (std::size_t k = 1; k + 1 < both.size(); ++k) {
      if (both[k].color != Color::Red) continue;
      long dur = both[k].end - both[k].start;
      if (dur != static_cast<long>(plan.all_red_s)) {
        violations.push_back(name + ": all-red of " + std::to_string(dur) + " s (plan " +
                             std::to_string(static_cast<long>(plan.all_red_s)) + ")");
      }
    }
  }
  return violations;
}

}  // namespace evplab
