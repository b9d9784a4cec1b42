#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecvm/engine.hpp"
#include "ecvm/guest.hpp"
#include "ecvm/hypervisor.hpp"
#include "ecvm/report.hpp"
#include "ecvm/scenario.hpp"
#include "ecvm/timeline.hpp"
#include "ecvm/workload.hpp"

namespace ecvm {

inline RunResult run_scenario(const Scenario& scenario, std::optional<Strategy> strategy_override = {}) {
  const Strategy strategy = strategy_override.value_or(scenario.fleet.strategy);

  Engine engine(scenario.seed);
  const std::vector<Task> tasks = generate(scenario.workload, engine.rng(), scenario.flags.duration_jitter);

  TimelineRecorder recorder;

  FleetBuild build;
  build.sampler = scenario.sampler;
  build.policy = scenario.policy;
  build.latencies = scenario.latencies;
  build.fleet = scenario.fleet;
  build.fleet.strategy = strategy;
  build.exec.dispatch = scenario.flags.dispatch_on_checkin ? DispatchMode::CentralQueue : DispatchMode::UpfrontQueues;
  build.exec.preemptive_regular = scenario.flags.preemptive_regular;
  build.base_cvms = scenario.cvms;

  Fleet fleet(engine, recorder, std::move(build));
  fleet.start(tasks);
  const SimStats stats = engine.run(scenario.horizon);
  recorder.close_all(stats.final_time);

  RunResult r;
  r.scenario = scenario.name;
  r.strategy = strategy;
  r.seed = scenario.seed;
  r.segments = recorder.segments();
  TimelineRecorder::validate(r.segments);
  r.tasks = fleet.task_outcomes();
  r.messages = fleet.messages();
  r.samples = fleet.samples();
  r.decisions = fleet.decisions();
  r.tally = fleet.tally();
  r.sampler = scenario.sampler;
  r.ticks = fleet.ticks_total();
  r.sampler_cost = fleet.sampler_cost_total();
  r.stats = stats;
  for (const Cvm* cvm : fleet.cvms()) {
    const CvmConfig& cfg = cvm->config();
    r.cvms.push_back(CvmInfo{cfg.id, cfg.regular_vcpus, cfg.worker_vcpus, cfg.boot_latency, cfg.owner});
  }
  r.shutdown_completed = fleet.shutdown_completed();
  r.backup_idle_utilization = scenario.fleet.backup_idle_utilization;
  return r;
}

// One run per strategy on the same scenario and seed.
inline std::vector<RunResult> compare_strategies(const Scenario& scenario, const std::vector<Strategy>& strategies) {
  std::vector<RunResult> out;
  out.reserve(strategies.size());
  for (Strategy s : strategies) out.push_back(run_scenario(scenario, s));
  return out;
}

// One run per value of a dotted-path parameter, all on the scenario's seed.
inline std::vector<std::pair<std::string, RunResult>> sweep_param(const Scenario& scenario,
                                                                  const std::string& param,
                                                                  const std::vector<std::string>& values) {
  std::vector<std::pair<std::string, RunResult>> out;
  out.reserve(values.size());
  for (const std::string& v : values) out.emplace_back(v, run_scenario(with_param(scenario, param, v)));
  return out;
}

}  // namespace ecvm
