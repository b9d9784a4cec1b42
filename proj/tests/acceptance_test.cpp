// Acceptance gate: one test per shipped claim, one printed verdict line each.

#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "ecvm/simulation.hpp"
#include "testutil.hpp"

namespace ecvm {
namespace {

using test::fresh_dir;
using test::load_fixture;
using test::never_kill_violations;
using test::random_scenario;
using test::slurp;
using test::work_conservation_gap;

// Prints the verdict when the enclosing test scope ends.
struct Verdict {
  int num;
  const char* label;
  ~Verdict() {
    std::printf("[%s] criterion %d: %s\n", ::testing::Test::HasFailure() ? "FAIL" : "PASS", num, label);
    std::fflush(stdout);
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string run_artifacts(const RunResult& r, const std::string& tag) {
  const std::string dir = fresh_dir(tag);
  export_timeline_csv(dir + "/timeline.csv", r.segments);
  export_tasks_csv(dir + "/tasks.csv", r.tasks);
  export_messages_csv(dir + "/messages.csv", r.messages);
  return slurp(dir + "/timeline.csv") + slurp(dir + "/tasks.csv") + slurp(dir + "/messages.csv");
}

constexpr VcpuIndex kV = 3;

VcpuRegistry registry_in(VcpuLifecycleState state) {
  VcpuRegistry reg(0);
  switch (state) {
    case VcpuLifecycleState::Unregistered: break;
    case VcpuLifecycleState::RegisteredMain: reg.apply(kV, LifecycleInput::RegMain); break;
    case VcpuLifecycleState::WorkerActive: reg.apply(kV, LifecycleInput::RegWorker); break;
    case VcpuLifecycleState::WorkerIdleCheckedIn:
      reg.apply(kV, LifecycleInput::RegWorker);
      reg.apply(kV, LifecycleInput::Checkin);
      break;
    case VcpuLifecycleState::WorkerDormant:
      reg.apply(kV, LifecycleInput::RegWorker);
      reg.apply(kV, LifecycleInput::Checkin);
      reg.apply(kV, LifecycleInput::Sleep);
      break;
    case VcpuLifecycleState::Deregistered:
      reg.apply(kV, LifecycleInput::RegWorker);
      reg.apply(kV, LifecycleInput::DeregWorker);
      break;
  }
  return reg;
}

TEST(Acceptance, C01ProtocolExhaustiveness) {
  Verdict v{1, "protocol exhaustiveness"};
  const auto t0 = std::chrono::steady_clock::now();

  constexpr VcpuLifecycleState kStates[] = {
      VcpuLifecycleState::Unregistered,    VcpuLifecycleState::RegisteredMain,
      VcpuLifecycleState::WorkerActive,    VcpuLifecycleState::WorkerIdleCheckedIn,
      VcpuLifecycleState::WorkerDormant,   VcpuLifecycleState::Deregistered,
  };
  constexpr LifecycleInput kInputs[] = {
      LifecycleInput::RegMain,  LifecycleInput::RegWorker,  LifecycleInput::Checkin,
      LifecycleInput::DeregWorker, LifecycleInput::Deregister, LifecycleInput::Wake,
      LifecycleInput::Sleep,    LifecycleInput::Resume,
  };

  std::size_t pairs = 0;
  std::size_t legal = 0;
  for (VcpuLifecycleState from : kStates) {
    for (LifecycleInput input : kInputs) {
      ++pairs;
      const LifecycleTransition* row = nullptr;
      for (const LifecycleTransition& t : transition_table())
        if (t.from == from && t.input == input) row = &t;

      VcpuRegistry reg = registry_in(from);
      if (row) {
        ++legal;
        const RegistryDelta delta = reg.apply(kV, input);
        EXPECT_EQ(delta.to, row->to) << to_string(from) << " + " << to_string(input);
      } else {
        EXPECT_THROW(reg.apply(kV, input), ProtocolViolation) << to_string(from) << " + " << to_string(input);
        EXPECT_EQ(reg.state(kV), from) << "illegal input must not move the state";
      }
    }
  }
  EXPECT_EQ(pairs, 48u);
  EXPECT_EQ(legal, transition_table().size());
  EXPECT_LT(seconds_since(t0), 1.0);
}

TEST(Acceptance, C02NeverKillSafety) {
  Verdict v{2, "never-kill safety"};
  const auto t0 = std::chrono::steady_clock::now();

  std::mt19937_64 rng(20260815);
  for (int i = 0; i < 1000; ++i) {
    const Scenario s = random_scenario(rng);
    const RunResult r = run_scenario(s);
    ASSERT_EQ(never_kill_violations(r), 0u) << "scenario " << i << " seed " << s.seed;
  }
  EXPECT_LT(seconds_since(t0), 30.0);
}

TEST(Acceptance, C03Determinism) {
  Verdict v{3, "determinism"};
  for (const char* name : {"synthetic", "burst_serverless"}) {
    const Scenario s = load_fixture(name);
    const std::string first = run_artifacts(run_scenario(s), std::string("acc3_") + name + "_a");
    const std::string second = run_artifacts(run_scenario(s), std::string("acc3_") + name + "_b");
    ASSERT_FALSE(first.empty());
    EXPECT_EQ(first, second) << name;
  }
}

TEST(Acceptance, C04WorkConservation) {
  Verdict v{4, "work conservation"};
  std::size_t runs = 0;

  for (const char* name : {"synthetic", "regular_vm", "burst_serverless", "hotplug",
                           "backup_vcpu", "fixed_cold_start", "fixed_warm_keep"}) {
    const RunResult r = run_scenario(load_fixture(name));
    ASSERT_EQ(work_conservation_gap(r), 0) << name;
    ++runs;
  }
  std::mt19937_64 rng(424242);
  for (int i = 0; i < 300; ++i) {
    const Scenario s = random_scenario(rng);
    ASSERT_EQ(work_conservation_gap(run_scenario(s)), 0) << "random scenario " << i;
    ++runs;
  }
  EXPECT_EQ(runs, 307u);
}

TEST(Acceptance, C05RegularVmBaseline) {
  Verdict v{5, "regular VM baseline makespan"};
  const RunResult r = run_scenario(load_fixture("regular_vm"));
  EXPECT_EQ(makespan(r), SimTime::s(20));  // exact, zero tolerance
}

TEST(Acceptance, C06SamplingIntervalSweep) {
  Verdict v{6, "sampling interval sweep"};
  const auto t0 = std::chrono::steady_clock::now();

  const auto rows = sweep_param(load_fixture("synthetic"), "scheduler.interval", {"0.5s", "1s", "2s"});
  ASSERT_EQ(rows.size(), 3u);
  const SimTime expected[] = {SimTime::us(21'500'007), SimTime::us(23'000'007), SimTime::us(26'000'007)};
  const double reference_s[] = {22.0, 25.0, 27.0};

  SimTime prev = SimTime::zero();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SimTime mk = makespan(rows[i].second);
    EXPECT_EQ(mk, expected[i]) << rows[i].first;
    const double mk_s = static_cast<double>(mk.count()) / 1e6;
    EXPECT_GE(mk_s, 0.85 * reference_s[i]) << rows[i].first;
    EXPECT_LE(mk_s, 1.15 * reference_s[i]) << rows[i].first;
    EXPECT_GE(mk, prev) << "makespan must not decrease as sampling coarsens";
    prev = mk;
  }
  EXPECT_LT(seconds_since(t0), 1.0);
}

TEST(Acceptance, C07EpilogueOnePerTick) {
  Verdict v{7, "one-per-tick epilogue"};
  const RunResult r = run_scenario(load_fixture("synthetic"));
  const SimTime interval = r.sampler.interval;

  std::vector<DecisionRecord> sleeps;
  for (const DecisionRecord& d : r.decisions)
    if (d.kind == DecisionKind::SleepWorker) sleeps.push_back(d);
  ASSERT_EQ(sleeps.size(), 3u);
  for (std::size_t i = 1; i < sleeps.size(); ++i)
    EXPECT_EQ(sleeps[i].at - sleeps[i - 1].at, interval) << "one worker per sampling tick";

  // every worker back to dormant within four sampling cycles of the last finish
  const auto epi = epilogue_latencies(r);
  ASSERT_EQ(epi.size(), 3u);
  for (const auto& [vcpu, latency] : epi) EXPECT_LE(latency, interval * 4) << to_string(vcpu);

  // the regular vCPU never leaves the active states
  for (const TimelineSegment& s : r.segments) {
    if (s.vcpu.vcpu == 0) {
      EXPECT_TRUE(s.state == SegmentState::Booting || s.state == SegmentState::ActiveBusy ||
                  s.state == SegmentState::ActiveIdle)
          << to_string(s.vcpu);
    }
  }
}

TEST(Acceptance, C08TransitionLatencyRatio) {
  Verdict v{8, "transition latency ratio"};
  const TransitionStats worker = transition_stats(run_scenario(load_fixture("synthetic")).tally);
  const TransitionStats hotplug = transition_stats(run_scenario(load_fixture("hotplug")).tally);

  EXPECT_DOUBLE_EQ(worker.round_trip_mean_us, 14.0);
  EXPECT_DOUBLE_EQ(hotplug.round_trip_mean_us, 35'414.0);
  EXPECT_NEAR(hotplug.round_trip_mean_us / worker.round_trip_mean_us, 2529.57, 0.005);
}

TEST(Acceptance, C09SamplerOverheadAccounting) {
  Verdict v{9, "sampler overhead accounting"};
  const Scenario base = load_fixture("synthetic");

  const double at_2s = sampler_overhead_fraction(run_scenario(base).sampler);
  EXPECT_DOUBLE_EQ(at_2s, 1e-5);   // 0.001%
  EXPECT_LE(at_2s, 1e-4);          // reported ceiling: around 0.01%

  const double at_half_s = sampler_overhead_fraction(
      run_scenario(with_param(base, "scheduler.interval", "0.5s")).sampler);
  EXPECT_DOUBLE_EQ(at_half_s, 4e-5);  // 0.004%
  EXPECT_LE(at_half_s, 4e-4);         // reported ceiling: 0.04%
}

TEST(Acceptance, C10ServerlessComparisonOrdering) {
  Verdict v{10, "serverless comparison ordering"};
  const Scenario burst = load_fixture("burst_serverless");
  const RunResult worker = run_scenario(burst, Strategy::WorkerVcpu);
  const RunResult warm = run_scenario(burst, Strategy::FixedWarmKeep);
  const RunResult cold = run_scenario(burst, Strategy::FixedColdStart);

  EXPECT_LT(makespan(worker), makespan(warm));
  EXPECT_LT(makespan(warm), makespan(cold));

  EXPECT_GE(cpu_efficiency(worker), 0.99);
  EXPECT_NEAR(cpu_efficiency(warm), 0.789, 0.10);
  EXPECT_NEAR(cpu_efficiency(cold), 0.494, 0.10);
}

// A one-lane elastic CVM and a fixed cold-start container fleet are the same
// machine when each container can serve the whole (single-task) workload:
// identical timelines, tasks, and wire traffic, byte for byte.
TEST(Acceptance, C11StrategyEquivalence) {
  Verdict v{11, "strategy equivalence"};
  int instance = 0;

  auto check = [&](SimTime boot, std::uint32_t pool, SimTime arrival, SimTime duration, std::uint64_t seed) {
    Scenario s;
    s.name = "equiv";
    s.seed = seed;
    s.cvms = {CvmConfig{0, 1, 0, boot, "u0"}};
    s.fleet.max_cvms = 1;
    s.fleet.cvm_template = CvmTemplate{1, 0, boot};
    s.fleet.cold_boot_latency = boot;
    s.fleet.warm_pool_size = pool;
    s.workload = BatchSpec{1, duration, arrival};
    validate(s);

    const std::string tag = "acc11_" + std::to_string(instance++);
    const std::string elastic = run_artifacts(run_scenario(s, Strategy::WorkerVcpu), tag + "_w");
    const std::string fixed = run_artifacts(run_scenario(s, Strategy::FixedColdStart), tag + "_c");
    EXPECT_EQ(elastic, fixed) << "boot=" << boot.count() << " pool=" << pool << " arrival=" << arrival.count()
                              << " duration=" << duration.count() << " seed=" << seed;
  };

  const SimTime durations[] = {SimTime::ms(1), SimTime::ms(700), SimTime::s(30)};
  // pre-booted container, task arrives later
  for (SimTime arrival : {SimTime::zero(), SimTime::s(3), SimTime::s(20), SimTime::us(123457)})
    for (SimTime d : durations)
      for (std::uint64_t seed : {3ull, 11ull}) check(SimTime::zero(), 1, arrival, d, seed);
  // container boots on demand, task waits out the boot
  for (SimTime boot : {SimTime::zero(), SimTime::s(5), SimTime::s(15)})
    for (SimTime d : durations)
      for (std::uint64_t seed : {3ull, 11ull}) check(boot, 0, SimTime::zero(), d, seed);

  EXPECT_EQ(instance, 42);
}

TEST(Acceptance, C12BootTimeNeutrality) {
  Verdict v{12, "boot-time neutrality"};
  const Scenario base = load_fixture("synthetic");

  for (std::uint32_t n = 0; n <= 3; ++n) {
    Scenario s = base;
    s.cvms[0].worker_vcpus = n;
    s.workload = BatchSpec{1, SimTime::s(20), s.cvms[0].boot_latency};
    validate(s);
    const RunResult r = run_scenario(s);
    EXPECT_EQ(makespan(r), SimTime::s(20)) << "n=" << n;
    for (const TimelineSegment& seg : r.segments) {
      if (seg.vcpu.vcpu >= 1) {
        EXPECT_NE(seg.state, SegmentState::ActiveBusy) << "n=" << n;
      }
    }
  }
}

}  // namespace
}  // namespace ecvm
