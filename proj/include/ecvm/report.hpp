#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecvm/engine.hpp"
#include "ecvm/hypervisor.hpp"
#include "ecvm/protocol.hpp"
#include "ecvm/time.hpp"
#include "ecvm/timeline.hpp"
#include "ecvm/workload.hpp"

namespace ecvm {

class Incomplete : public std::runtime_error {
 public:
  explicit Incomplete(const std::string& what) : std::runtime_error(what) {}
};

class DivisionUndefined : public std::runtime_error {
 public:
  explicit DivisionUndefined(const std::string& what) : std::runtime_error(what) {}
};

class ExportError : public std::runtime_error {
 public:
  explicit ExportError(const std::string& path) : std::runtime_error("cannot write " + path) {}
};

struct CvmInfo {
  CvmId id = 0;
  std::uint32_t regular_vcpus = 0;
  std::uint32_t worker_vcpus = 0;
  SimTime boot_latency;
  std::string owner;
};

struct RunResult {
  std::string scenario;
  Strategy strategy = Strategy::WorkerVcpu;
  std::uint64_t seed = 0;
  std::vector<TimelineSegment> segments;
  std::vector<TaskOutcome> tasks;
  std::vector<ProtocolMessage> messages;
  std::vector<SampleRecord> samples;
  std::vector<DecisionRecord> decisions;
  TransitionTally tally;
  SamplerConfig sampler;
  std::uint64_t ticks = 0;
  SimTime sampler_cost;
  SimStats stats;
  std::vector<CvmInfo> cvms;
  bool shutdown_completed = false;
  double backup_idle_utilization = 0.0;
};

struct TimeWindow {
  SimTime from;
  SimTime to;
};

// --- metrics ---------------------------------------------------------------

// First task arrival to last task completion.
inline SimTime makespan(const std::vector<TaskOutcome>& tasks) {
  if (tasks.empty()) throw Incomplete("makespan undefined: no tasks");
  SimTime first_arrival = tasks.front().task.arrival;
  SimTime last_finish;
  for (const TaskOutcome& t : tasks) {
    if (!t.finished) throw Incomplete("task " + std::to_string(t.task.id) + " never finished");
    first_arrival = min(first_arrival, t.task.arrival);
    last_finish = max(last_finish, *t.finished);
  }
  return last_finish - first_arrival;
}

inline std::optional<SimTime> try_makespan(const std::vector<TaskOutcome>& tasks) {
  try {
    return makespan(tasks);
  } catch (const Incomplete&) {
    return std::nullopt;
  }
}

inline std::optional<TimeWindow> run_window(const std::vector<TaskOutcome>& tasks) {
  std::optional<TimeWindow> w;
  for (const TaskOutcome& t : tasks) {
    if (!t.finished) continue;
    if (!w) {
      w = TimeWindow{t.task.arrival, *t.finished};
    } else {
      w->from = min(w->from, t.task.arrival);
      w->to = max(w->to, *t.finished);
    }
  }
  if (w)
    for (const TaskOutcome& t : tasks) w->from = min(w->from, t.task.arrival);
  return w;
}

inline SimTime clipped(const TimelineSegment& s, TimeWindow w) {
  const SimTime from = max(s.from, w.from);
  const SimTime to = min(s.to, w.to);
  return to > from ? to - from : SimTime::zero();
}

// Busy share of all provisioned vCPU time in the window. Dormant time is
// excluded on both sides; boot and transition slivers are costs the
// mechanism pays and stay in the denominator.
inline double cpu_efficiency(const std::vector<TimelineSegment>& segments, TimeWindow window) {
  SimTime busy;
  SimTime provisioned;
  for (const TimelineSegment& s : segments) {
    if (s.state == SegmentState::Dormant) continue;
    const SimTime t = clipped(s, window);
    provisioned += t;
    if (s.state == SegmentState::ActiveBusy) busy += t;
  }
  if (provisioned == SimTime::zero()) throw DivisionUndefined("no provisioned vCPU time in window");
  return static_cast<double>(busy.count()) / static_cast<double>(provisioned.count());
}

// Per worker: end of its last busy segment to the start of its final dormant
// stretch. Workers that never ran anything report 0 by convention.
inline std::map<GlobalVcpuId, SimTime> epilogue_latencies(const std::vector<TimelineSegment>& segments) {
  std::map<GlobalVcpuId, SimTime> last_busy_end;
  std::map<GlobalVcpuId, std::optional<SimTime>> final_dormant_start;
  std::map<GlobalVcpuId, bool> seen_worker;
  for (const TimelineSegment& s : segments) {
    if (s.kind != VcpuKind::Worker) continue;
    seen_worker[s.vcpu] = true;
    if (s.state == SegmentState::ActiveBusy) {
      last_busy_end[s.vcpu] = max(last_busy_end[s.vcpu], s.to);
      final_dormant_start[s.vcpu] = std::nullopt;  // dormancy before this no longer counts
    } else if (s.state == SegmentState::Dormant) {
      final_dormant_start[s.vcpu] = s.from;
    } else if (s.state == SegmentState::TransitionSleep) {
      // Dormancy begins when the sleep completes, even when deregistration
      // at that same instant leaves no Dormant segment to record.
      final_dormant_start[s.vcpu] = s.to;
    }
  }
  std::map<GlobalVcpuId, SimTime> out;
  for (const auto& [vcpu, seen] : seen_worker) {
    auto busy = last_busy_end.find(vcpu);
    if (busy == last_busy_end.end()) {
      out[vcpu] = SimTime::zero();  // never woken for work
      continue;
    }
    const std::optional<SimTime>& dormant = final_dormant_start[vcpu];
    if (dormant) out[vcpu] = *dormant - busy->second;
  }
  return out;
}

struct TransitionStats {
  std::uint64_t wake_count = 0;
  std::uint64_t sleep_count = 0;
  double wake_mean_us = 0.0;
  double sleep_mean_us = 0.0;
  double round_trip_mean_us = 0.0;
};

inline TransitionStats transition_stats(const TransitionTally& t) {
  TransitionStats s;
  s.wake_count = t.wake_count;
  s.sleep_count = t.sleep_count;
  if (t.wake_count > 0) s.wake_mean_us = static_cast<double>(t.wake_total.count()) / static_cast<double>(t.wake_count);
  if (t.sleep_count > 0)
    s.sleep_mean_us = static_cast<double>(t.sleep_total.count()) / static_cast<double>(t.sleep_count);
  s.round_trip_mean_us = s.wake_mean_us + s.sleep_mean_us;
  return s;
}

inline double sampler_overhead_fraction(const SamplerConfig& c) {
  if (c.interval == SimTime::zero()) return 0.0;
  return static_cast<double>(c.per_vm_cost.count()) / static_cast<double>(c.interval.count());
}

inline SimTime total_busy(const std::vector<TimelineSegment>& segments) {
  SimTime sum;
  for (const TimelineSegment& s : segments)
    if (s.state == SegmentState::ActiveBusy) sum += s.to - s.from;
  return sum;
}

inline SimTime total_boot(const std::vector<TimelineSegment>& segments) {
  SimTime sum;
  for (const TimelineSegment& s : segments)
    if (s.state == SegmentState::Booting) sum += s.to - s.from;
  return sum;
}

// --- exports -----------------------------------------------------------------

namespace detail {

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExportError(path);
  return out;
}

inline std::string fixed6(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace detail

inline void export_timeline_csv(const std::string& path, const std::vector<TimelineSegment>& segments) {
  std::ofstream out = detail::open_for_write(path);
  out << "vcpu_id,kind,state,from_us,to_us,task_id\n";
  for (const TimelineSegment& s : segments) {
    out << to_string(s.vcpu) << ',' << to_string(s.kind) << ',' << to_string(s.state) << ',' << s.from.count() << ','
        << s.to.count() << ',';
    if (s.task) out << *s.task;
    out << '\n';
  }
  if (!out) throw ExportError(path);
}

inline void export_tasks_csv(const std::string& path, const std::vector<TaskOutcome>& tasks) {
  std::ofstream out = detail::open_for_write(path);
  out << "task_id,user,function,arrival_us,start_us,finish_us\n";
  for (const TaskOutcome& t : tasks) {
    out << t.task.id << ',' << t.task.user << ',' << t.task.function << ',' << t.task.arrival.count() << ',';
    if (t.started) out << t.started->count();
    out << ',';
    if (t.finished) out << t.finished->count();
    out << '\n';
  }
  if (!out) throw ExportError(path);
}

inline void export_messages_csv(const std::string& path, const std::vector<ProtocolMessage>& messages) {
  std::ofstream out = detail::open_for_write(path);
  out << "time_us,cvm_id,vcpu_id,message\n";
  for (const ProtocolMessage& m : messages) {
    out << m.time.count() << ',' << m.cvm << ',';
    if (m.vcpu) out << *m.vcpu;
    out << ',' << wire_name(m.kind) << '\n';
  }
  if (!out) throw ExportError(path);
}

inline void export_segments_jsonl(const std::string& path, const std::vector<TimelineSegment>& segments) {
  std::ofstream out = detail::open_for_write(path);
  for (const TimelineSegment& s : segments) {
    nlohmann::ordered_json j;
    j["vcpu"] = to_string(s.vcpu);
    j["kind"] = to_string(s.kind);
    j["state"] = to_string(s.state);
    j["from_us"] = s.from.count();
    j["to_us"] = s.to.count();
    if (s.task) j["task_id"] = *s.task;
    out << j.dump() << '\n';
  }
  if (!out) throw ExportError(path);
}

// Fixed-width grid, one row per vCPU, one glyph per bucket: '#' busy,
// 'B' booting, 'o' provisioned-idle (incl. transition slivers), '.' dormant.
// A bucket shows its dominant state; exact ties go to the costlier glyph.
inline std::string render_text_timeline(const std::vector<TimelineSegment>& segments,
                                        SimTime bucket = SimTime::ms(500)) {
  if (bucket <= SimTime::zero()) throw std::invalid_argument("bucket must be positive");
  std::ostringstream os;
  os << "bucket_us=" << bucket.count() << '\n';
  if (segments.empty()) return os.str();

  SimTime end;
  for (const TimelineSegment& s : segments) end = max(end, s.to);
  const std::int64_t buckets = (end + bucket - SimTime::us(1)) / bucket;

  std::map<GlobalVcpuId, std::vector<std::array<std::int64_t, 4>>> grid;  // #, B, o, .
  for (const TimelineSegment& s : segments) {
    auto& row = grid[s.vcpu];
    if (row.empty()) row.assign(static_cast<std::size_t>(buckets), {0, 0, 0, 0});
    int cls = 3;
    switch (s.state) {
      case SegmentState::ActiveBusy: cls = 0; break;
      case SegmentState::Booting: cls = 1; break;
      case SegmentState::ActiveIdle:
      case SegmentState::TransitionWake:
      case SegmentState::TransitionSleep: cls = 2; break;
      case SegmentState::Dormant: cls = 3; break;
    }
    for (std::int64_t b = s.from / bucket; b < buckets; ++b) {
      const TimeWindow w{bucket * b, bucket * (b + 1)};
      if (w.from >= s.to) break;
      row[static_cast<std::size_t>(b)][static_cast<std::size_t>(cls)] += clipped(s, w).count();
    }
  }

  static constexpr char kGlyphs[4] = {'#', 'B', 'o', '.'};
  for (const auto& [vcpu, row] : grid) {
    os << to_string(vcpu) << ' ';
    for (const auto& cell : row) {
      int best = 3;
      for (int cls = 2; cls >= 0; --cls)
        if (cell[static_cast<std::size_t>(cls)] >= cell[static_cast<std::size_t>(best)]) best = cls;
      // untracked time in a bucket (before birth / after close) reads dormant
      const std::int64_t covered = cell[0] + cell[1] + cell[2] + cell[3];
      if (covered == 0)
        os << '.';
      else
        os << kGlyphs[best];
    }
    os << '\n';
  }
  return os.str();
}

inline void export_text_timeline(const std::string& path, const std::vector<TimelineSegment>& segments,
                                 SimTime bucket = SimTime::ms(500)) {
  std::ofstream out = detail::open_for_write(path);
  out << render_text_timeline(segments, bucket);
  if (!out) throw ExportError(path);
}

inline nlohmann::ordered_json report_json(const RunResult& r) {
  nlohmann::ordered_json j;
  j["schema"] = "elastic-cvm-sim/report/v1";
  j["scenario"] = r.scenario;
  j["strategy"] = strategy_name(r.strategy);
  j["seed"] = r.seed;

  std::size_t completed = 0;
  for (const TaskOutcome& t : r.tasks)
    if (t.finished) ++completed;
  j["tasks"] = {{"total", r.tasks.size()}, {"completed", completed}};

  const std::optional<SimTime> mk = try_makespan(r.tasks);
  j["makespan_us"] = mk ? nlohmann::ordered_json(mk->count()) : nlohmann::ordered_json(nullptr);

  const std::optional<TimeWindow> w = run_window(r.tasks);
  if (w) {
    try {
      j["cpu_efficiency"] = cpu_efficiency(r.segments, *w);
    } catch (const DivisionUndefined&) {
      j["cpu_efficiency"] = nullptr;
    }
    j["window_us"] = {{"from", w->from.count()}, {"to", w->to.count()}};
  } else {
    j["cpu_efficiency"] = nullptr;
  }

  nlohmann::ordered_json epi = nlohmann::ordered_json::object();
  for (const auto& [vcpu, lat] : epilogue_latencies(r.segments)) epi[to_string(vcpu)] = lat.count();
  j["epilogue_us"] = epi;

  const TransitionStats ts = transition_stats(r.tally);
  j["transitions"] = {{"wake_count", ts.wake_count},
                      {"sleep_count", ts.sleep_count},
                      {"wake_mean_us", ts.wake_mean_us},
                      {"sleep_mean_us", ts.sleep_mean_us},
                      {"round_trip_mean_us", ts.round_trip_mean_us}};

  j["sampler"] = {{"interval_us", r.sampler.interval.count()},
                  {"per_vm_cost_us", r.sampler.per_vm_cost.count()},
                  {"ticks", r.ticks},
                  {"cost_total_us", r.sampler_cost.count()},
                  {"overhead_fraction", sampler_overhead_fraction(r.sampler)}};

  j["total_busy_us"] = total_busy(r.segments).count();
  j["total_boot_us"] = total_boot(r.segments).count();

  nlohmann::ordered_json cvms = nlohmann::ordered_json::array();
  for (const CvmInfo& c : r.cvms)
    cvms.push_back({{"id", c.id},
                    {"regular_vcpus", c.regular_vcpus},
                    {"worker_vcpus", c.worker_vcpus},
                    {"boot_latency_us", c.boot_latency.count()},
                    {"owner", c.owner}});
  j["cvms"] = cvms;

  if (r.strategy == Strategy::BackupVcpu) j["backup_idle_utilization"] = r.backup_idle_utilization;
  j["shutdown_completed"] = r.shutdown_completed;
  j["engine"] = {{"events_scheduled", r.stats.events_scheduled},
                 {"events_processed", r.stats.events_processed},
                 {"events_cancelled", r.stats.events_cancelled},
                 {"final_time_us", r.stats.final_time.count()}};
  return j;
}

inline void export_report_json(const std::string& path, const RunResult& r) {
  std::ofstream out = detail::open_for_write(path);
  out << report_json(r).dump(2) << '\n';
  if (!out) throw ExportError(path);
}

struct CompareRow {
  Strategy strategy = Strategy::WorkerVcpu;
  std::optional<SimTime> makespan;
  std::optional<double> cpu_efficiency;
  std::uint64_t total_transitions = 0;
  SimTime total_boot;
};

inline CompareRow compare_row(const RunResult& r) {
  CompareRow row;
  row.strategy = r.strategy;
  row.makespan = try_makespan(r.tasks);
  const std::optional<TimeWindow> w = run_window(r.tasks);
  if (w) {
    try {
      row.cpu_efficiency = cpu_efficiency(r.segments, *w);
    } catch (const DivisionUndefined&) {
    }
  }
  row.total_transitions = r.tally.wake_count + r.tally.sleep_count;
  row.total_boot = total_boot(r.segments);
  return row;
}

inline void export_compare_csv(const std::string& path, const std::vector<CompareRow>& rows) {
  std::ofstream out = detail::open_for_write(path);
  out << "strategy,makespan_us,cpu_efficiency,total_transitions,total_boot_us\n";
  for (const CompareRow& r : rows) {
    out << strategy_name(r.strategy) << ',';
    if (r.makespan) out << r.makespan->count();
    out << ',';
    if (r.cpu_efficiency) out << detail::fixed6(*r.cpu_efficiency);
    out << ',' << r.total_transitions << ',' << r.total_boot.count() << '\n';
  }
  if (!out) throw ExportError(path);
}

struct SweepRow {
  std::string value;  // swept value as written, so rows round-trip exactly
  std::optional<SimTime> makespan;
  std::optional<double> cpu_efficiency;
};

inline void export_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out = detail::open_for_write(path);
  out << "value,makespan_us,cpu_efficiency\n";
  for (const SweepRow& r : rows) {
    out << r.value << ',';
    if (r.makespan) out << r.makespan->count();
    out << ',';
    if (r.cpu_efficiency) out << detail::fixed6(*r.cpu_efficiency);
    out << '\n';
  }
  if (!out) throw ExportError(path);
}

// Whole-run conveniences over the field-level metric functions above.

inline SimTime makespan(const RunResult& r) { return makespan(r.tasks); }

inline std::optional<SimTime> try_makespan(const RunResult& r) { return try_makespan(r.tasks); }

inline double cpu_efficiency(const RunResult& r) {
  const std::optional<TimeWindow> w = run_window(r.tasks);
  if (!w) throw DivisionUndefined("no finished tasks define a window");
  return cpu_efficiency(r.segments, *w);
}

inline std::map<GlobalVcpuId, SimTime> epilogue_latencies(const RunResult& r) {
  return epilogue_latencies(r.segments);
}

}  // namespace ecvm
