#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecvm/protocol.hpp"
#include "ecvm/time.hpp"
#include "ecvm/workload.hpp"

namespace ecvm {

struct GlobalVcpuId {
  CvmId cvm = 0;
  VcpuIndex vcpu = 0;

  auto operator<=>(const GlobalVcpuId&) const = default;
};

inline std::string to_string(GlobalVcpuId id) {
  return "c" + std::to_string(id.cvm) + ".v" + std::to_string(id.vcpu);
}

enum class SegmentState { Dormant, ActiveBusy, ActiveIdle, Booting, TransitionWake, TransitionSleep };

inline const char* to_string(SegmentState s) {
  switch (s) {
    case SegmentState::Dormant: return "dormant";
    case SegmentState::ActiveBusy: return "active_busy";
    case SegmentState::ActiveIdle: return "active_idle";
    case SegmentState::Booting: return "booting";
    case SegmentState::TransitionWake: return "transition_wake";
    case SegmentState::TransitionSleep: return "transition_sleep";
  }
  return "?";
}

struct TimelineSegment {
  GlobalVcpuId vcpu;
  VcpuKind kind = VcpuKind::Regular;
  SegmentState state = SegmentState::Dormant;
  SimTime from;
  SimTime to;
  std::optional<TaskId> task;  // set iff state == ActiveBusy
};

class OverlapError : public std::logic_error {
 public:
  explicit OverlapError(const std::string& what) : std::logic_error(what) {}
};

// Records per-vCPU state as it changes and closes it into contiguous,
// non-overlapping segments. Zero-length states collapse away, so a worker
// that registers and is parked in the same instant leaves no idle sliver.
class TimelineRecorder {
 public:
  void register_vcpu(GlobalVcpuId id, VcpuKind kind, SimTime birth, SegmentState initial,
                     std::optional<TaskId> task = std::nullopt) {
    if (open_.count(id)) throw OverlapError("vcpu " + to_string(id) + " already registered");
    open_[id] = Open{kind, initial, task, birth, false};
  }

  void set_state(GlobalVcpuId id, SimTime at, SegmentState state, std::optional<TaskId> task = std::nullopt) {
    Open& o = open_entry(id);
    if (o.closed) throw OverlapError("vcpu " + to_string(id) + " timeline already closed");
    if (at < o.since) throw OverlapError("state change at " + format_duration(at) + " before segment start on " + to_string(id));
    if (state == o.state && task == o.task) return;
    if (at > o.since) record(TimelineSegment{id, o.kind, o.state, o.since, at, o.task});
    o.state = state;
    o.task = task;
    o.since = at;
  }

  void close(GlobalVcpuId id, SimTime at) {
    Open& o = open_entry(id);
    if (o.closed) return;
    if (at > o.since) record(TimelineSegment{id, o.kind, o.state, o.since, at, o.task});
    o.closed = true;
  }

  void close_all(SimTime at) {
    for (auto& [id, o] : open_)
      if (!o.closed && at >= o.since) close(id, at);
  }

  SegmentState current_state(GlobalVcpuId id) const {
    auto it = open_.find(id);
    if (it == open_.end()) throw OverlapError("vcpu " + to_string(id) + " not registered");
    return it->second.state;
  }

  // Direct append; enforces the per-vCPU tiling invariant.
  void record(TimelineSegment seg) {
    if (seg.to <= seg.from)
      throw OverlapError("segment on " + to_string(seg.vcpu) + " has non-positive length");
    if ((seg.task.has_value()) != (seg.state == SegmentState::ActiveBusy))
      throw OverlapError("task id must be set exactly on active_busy segments");
    auto& last = last_end_[seg.vcpu];
    if (last.has_value() && seg.from != *last)
      throw OverlapError("segment on " + to_string(seg.vcpu) + " starts at " + format_duration(seg.from) +
                         ", expected " + format_duration(*last));
    last = seg.to;
    segments_.push_back(std::move(seg));
  }

  // Segments sorted by (vcpu, from); call after close_all.
  std::vector<TimelineSegment> segments() const {
    std::vector<TimelineSegment> out = segments_;
    std::sort(out.begin(), out.end(), [](const TimelineSegment& a, const TimelineSegment& b) {
      if (a.vcpu != b.vcpu) return a.vcpu < b.vcpu;
      return a.from < b.from;
    });
    return out;
  }

  // Tiling check over an exported segment list: per vCPU, segments are
  // ordered, contiguous, and non-overlapping.
  static void validate(const std::vector<TimelineSegment>& segs) {
    std::map<GlobalVcpuId, SimTime> end;
    for (const TimelineSegment& s : segs) {
      if (s.to <= s.from) throw OverlapError("empty segment on " + to_string(s.vcpu));
      auto it = end.find(s.vcpu);
      if (it != end.end() && s.from != it->second)
        throw OverlapError("gap or overlap on " + to_string(s.vcpu) + " at " + format_duration(s.from));
      end[s.vcpu] = s.to;
    }
  }

 private:
  struct Open {
    VcpuKind kind;
    SegmentState state;
    std::optional<TaskId> task;
    SimTime since;
    bool closed;
  };

  Open& open_entry(GlobalVcpuId id) {
    auto it = open_.find(id);
    if (it == open_.end()) throw OverlapError("vcpu " + to_string(id) + " not registered");
    return it->second;
  }

  std::map<GlobalVcpuId, Open> open_;
  std::map<GlobalVcpuId, std::optional<SimTime>> last_end_;
  std::vector<TimelineSegment> segments_;
};

}  // namespace ecvm
