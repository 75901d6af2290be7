#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evplab {

enum class EventKind : std::uint8_t { Signal, Preempt, Detector, Erv, Vehicle };

enum class Phase : std::uint8_t { Mainline = 0, Cross = 1 };
enum class Color : std::uint8_t { Red = 0, Green = 1, Yellow = 2 };
enum class ControlMode : std::uint8_t { Normal = 0, PreemptEntry = 1, PreemptDwell = 2, PreemptExit = 3 };

// One simulation event. Compact POD; field meaning depends on kind:
//   Signal:   a=phase, b=color, c=mode
//   Preempt:  a=1 call / 0 release, b=strategy tag
//   Detector: a=occupancy (0/1)
//   Erv:      a=milestone (0 entry, 1 exit, 2 checkin, 3 stopbar), x=position_ft
//   Vehicle:  a=1 enter / 0 exit, b=vehicle class, x=position_ft
struct Event {
  double t = 0.0;
  EventKind kind = EventKind::Signal;
  std::int16_t intersection = -1;
  std::int32_t vehicle = -1;
  std::int16_t a = 0;
  std::int16_t b = 0;
  std::int16_t c = 0;
  double x = 0.0;
};

struct EventLog {
  std::vector<Event> events;

  void push(const Event& e) { events.push_back(e); }
  bool empty() const { return events.empty(); }
  std::size_t size() const { return events.size(); }
  auto begin() const { return events.begin(); }
  auto end() const { return events.end(); }

  // Line-delimited JSON: {"t":..,"kind":..,"intersection":..,"vehicle":..,"payload":{...}}
  std::string to_jsonl() const;
};

const char* to_string(Color c);
const char* to_string(Phase p);
const char* to_string(ControlMode m);

}  // namespace evplab
