#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ecvm/report.hpp"
#include "ecvm/scenario.hpp"
#include "ecvm/simulation.hpp"

namespace ecvm::test {

inline std::filesystem::path scenario_dir() { return std::filesystem::path(ECVM_SCENARIO_DIR); }

inline Scenario load_fixture(const std::string& name) {
  return parse_scenario((scenario_dir() / (name + ".json")).string());
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto dir =
      std::filesystem::temp_directory_path() / ("ecvm-test-" + tag + "-" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Microseconds by which Σ active_busy differs from Σ completed task durations.
// Zero in every run: the simulator may delay work but never loses or invents it.
inline std::int64_t work_conservation_gap(const RunResult& r) {
  SimTime busy;
  for (const TimelineSegment& s : r.segments)
    if (s.state == SegmentState::ActiveBusy) busy += s.to - s.from;
  SimTime completed;
  for (const TaskOutcome& t : r.tasks)
    if (t.finished) completed += t.task.duration;
  return busy.count() - completed.count();
}

// Sleep transitions on a worker must be covered by a CHECKIN no earlier than
// the worker's last busy instant: the scheduler never stops a mid-task vCPU.
inline int never_kill_violations(const RunResult& r) {
  std::map<GlobalVcpuId, std::vector<SimTime>> checkins;
  for (const ProtocolMessage& m : r.messages)
    if (m.kind == MessageKind::Checkin && m.vcpu) checkins[GlobalVcpuId{m.cvm, *m.vcpu}].push_back(m.time);

  int violations = 0;
  std::map<GlobalVcpuId, SimTime> last_busy_end;
  for (const TimelineSegment& s : r.segments) {
    if (s.kind != VcpuKind::Worker) continue;
    if (s.state == SegmentState::ActiveBusy) {
      last_busy_end[s.vcpu] = max(last_busy_end[s.vcpu], s.to);
      continue;
    }
    if (s.state != SegmentState::TransitionSleep) continue;
    const SimTime busy_end = last_busy_end.count(s.vcpu) ? last_busy_end[s.vcpu] : SimTime::zero();
    std::optional<SimTime> covering;
    for (SimTime c : checkins[s.vcpu])
      if (c <= s.from && c >= busy_end) covering = c;
    if (!covering) ++violations;
  }
  return violations;
}

// Small random scenario for property fuzzing: plenty of wake/sleep churn in a
// run that stays far below a second of simulated work.
inline Scenario random_scenario(std::mt19937_64& rng) {
  auto pick = [&rng](std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng);
  };
  auto frac = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  Scenario s;
  s.name = "fuzz";
  s.seed = rng();
  CvmConfig cvm;
  cvm.id = 0;
  cvm.regular_vcpus = static_cast<std::uint32_t>(pick(1, 2));
  cvm.worker_vcpus = static_cast<std::uint32_t>(pick(0, 4));
  cvm.boot_latency = SimTime::ms(pick(0, 3000));
  cvm.owner = "u0";
  s.cvms.push_back(cvm);
  s.fleet.strategy = Strategy::WorkerVcpu;
  s.fleet.max_cvms = static_cast<std::uint32_t>(pick(1, 3));
  s.fleet.cvm_template = CvmTemplate{cvm.regular_vcpus, cvm.worker_vcpus, cvm.boot_latency};
  s.sampler.interval = SimTime::ms(pick(100, 3000));
  s.policy.sleep_threshold = frac(0.0, 0.6);
  s.policy.wake_threshold = frac(s.policy.sleep_threshold + 0.05, 1.0);
  s.policy.max_actions_per_tick = static_cast<std::uint32_t>(pick(1, 3));
  s.latencies.message_delivery = pick(0, 1) ? SimTime::us(3) : SimTime::zero();
  s.flags.dispatch_on_checkin = pick(0, 1) != 0;
  s.flags.preemptive_regular = pick(0, 3) == 0;
  s.flags.duration_jitter = pick(0, 1) ? frac(0.0, 0.3) : 0.0;

  switch (pick(0, 2)) {
    case 0: {
      BatchSpec b;
      b.count = static_cast<std::uint32_t>(pick(0, 16));
      b.duration = SimTime::ms(pick(1, 4000));
      b.start = SimTime::ms(pick(0, 4000));
      s.workload = b;
      break;
    }
    case 1: {
      BurstSpec b;
      b.count = static_cast<std::uint32_t>(pick(1, 16));
      b.duration = SimTime::ms(pick(1, 4000));
      b.start = SimTime::ms(pick(0, 4000));
      s.workload = b;
      break;
    }
    default: {
      PoissonSpec p;
      p.rate_per_s = frac(0.2, 3.0);
      p.duration.kind = DurationDist::Kind::Exponential;
      p.duration.mean = SimTime::ms(pick(50, 2000));
      p.horizon = SimTime::s(pick(2, 8));
      s.workload = p;
      break;
    }
  }
  validate(s);
  return s;
}

}  // namespace ecvm::test
