#include "evplab/events.hpp"

#include <cstdio>

namespace evplab {

const char* to_string(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Yellow: return "yellow";
  }
  return "?";
}

const char* to_string(Phase p) {
  return p == Phase::Mainline ? "mainline" : "cross";
}

const char* to_string(ControlMode m) {
  switch (m) {
    case ControlMode::Normal: return "normal";
    case ControlMode::PreemptEntry: return "preempt_entry";
    case ControlMode::PreemptDwell: return "preempt_dwell";
    case ControlMode::PreemptExit: return "preempt_exit";
  }
  return "?";
}

namespace {

const char* erv_milestone(int a) {
  switch (a) {
    case 0: return "entry";
    case 1: return "exit";
    case 2: return "checkin";
    case 3: return "stopbar";
  }
  return "?";
}

void append_time(std::string& out, double t) {
  char buf[32];
  // times are multiples of 0.5 s; one decimal keeps the stream byte-stable
  std::snprintf(buf, sizeof(buf), "%.1f", t);
  out += buf;
}

void append_pos(std::string& out, double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", x);
  out += buf;
}

}  // namespace

std::string EventLog::to_jsonl() const {
  std::string out;
  out.reserve(events.size() * 96);
  for (const Event& e : events) {
    out += "{\"t\":";
    append_time(out, e.t);
    switch (e.kind) {
      case EventKind::Signal:
        out += ",\"kind\":\"signal\",\"intersection\":";
        out += std::to_string(e.intersection);
        out += ",\"payload\":{\"phase\":\"";
        out += to_string(static_cast<Phase>(e.a));
        out += "\",\"color\":\"";
        out += to_string(static_cast<Color>(e.b));
        out += "\",\"mode\":\"";
        out += to_string(static_cast<ControlMode>(e.c));
        out += "\"}}";
        break;
      case EventKind::Preempt:
        out += ",\"kind\":\"preempt\",\"intersection\":";
        out += std::to_string(e.intersection);
        out += ",\"payload\":{\"action\":\"";
        out += (e.a ? "call" : "release");
        out += "\",\"source\":";
        out += std::to_string(e.b);
        out += "}}";
        break;
      case EventKind::Detector:
        out += ",\"kind\":\"detector\",\"intersection\":";
        out += std::to_string(e.intersection);
        out += ",\"payload\":{\"occ\":";
        out += std::to_string(e.a);
        out += "}}";
        break;
      case EventKind::Erv:
        out += ",\"kind\":\"erv\"";
        if (e.intersection >= 0) {
          out += ",\"intersection\":";
          out += std::to_string(e.intersection);
        }
        out += ",\"payload\":{\"milestone\":\"";
        out += erv_milestone(e.a);
        out += "\",\"position_ft\":";
        append_pos(out, e.x);
        out += "}}";
        break;
      case EventKind::Vehicle:
        out += ",\"kind\":\"vehicle\",\"vehicle\":";
        out += std::to_string(e.vehicle);
        out += ",\"payload\":{\"action\":\"";
        out += (e.a ? "enter" : "exit");
        out += "\",\"class\":";
        out += std::to_string(e.b);
        out += ",\"position_ft\":";
        append_pos(out, e.x);
        out += "}}";
        break;
    }
    out += '\n';
  }
  return out;
}

}  // namespace evplab
