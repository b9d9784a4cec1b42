#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ecvm/engine.hpp"
#include "ecvm/guest.hpp"
#include "ecvm/protocol.hpp"
#include "ecvm/time.hpp"
#include "ecvm/timeline.hpp"
#include "ecvm/workload.hpp"

namespace ecvm {

enum class Strategy { WorkerVcpu, Hotplug, BackupVcpu, FixedColdStart, FixedWarmKeep };

inline constexpr Strategy kAllStrategies[] = {Strategy::WorkerVcpu, Strategy::Hotplug, Strategy::BackupVcpu,
                                              Strategy::FixedColdStart, Strategy::FixedWarmKeep};

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::WorkerVcpu: return "worker_vcpu";
    case Strategy::Hotplug: return "hotplug";
    case Strategy::BackupVcpu: return "backup_vcpu";
    case Strategy::FixedColdStart: return "fixed_cold_start";
    case Strategy::FixedWarmKeep: return "fixed_warm_keep";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(std::string_view name) {
  for (Strategy s : kAllStrategies)
    if (name == strategy_name(s)) return s;
  return std::nullopt;
}

// Fixed strategies provision single-vCPU containers on demand instead of
// resizing a running VM.
inline bool is_fixed(Strategy s) { return s == Strategy::FixedColdStart || s == Strategy::FixedWarmKeep; }

struct SamplerConfig {
  SimTime interval = SimTime::s(2);
  SimTime per_vm_cost = SimTime::us(20);
};

struct SchedulerPolicy {
  double wake_threshold = 0.90;   // utilization at or above wakes a worker
  double sleep_threshold = 0.50;  // utilization at or below sleeps one
  std::uint32_t max_actions_per_tick = 1;
  std::uint32_t scale_out_after_ticks = 1;  // consecutive saturated ticks before a new VM
};

struct TransitionLatencies {
  SimTime wake = SimTime::us(7);
  SimTime sleep = SimTime::us(7);
  SimTime hotplug_add = SimTime::us(24790);
  SimTime hotplug_remove = SimTime::us(10624);
  SimTime message_delivery;
};

struct CvmTemplate {
  std::uint32_t regular_vcpus = 1;
  std::uint32_t worker_vcpus = 0;
  SimTime boot_latency;
};

struct FleetConfig {
  Strategy strategy = Strategy::WorkerVcpu;
  std::uint32_t max_cvms = 1;
  CvmTemplate cvm_template;
  SimTime cold_boot_latency = SimTime::s(15);
  std::uint32_t warm_pool_size = 1;
  double backup_idle_utilization = 0.0;
};

struct SampleRecord {
  CvmId cvm = 0;
  LoadSample sample;
};

enum class DecisionKind { WakeWorker, SleepWorker, ScaleOut };

inline const char* decision_name(DecisionKind k) {
  switch (k) {
    case DecisionKind::WakeWorker: return "wake_worker";
    case DecisionKind::SleepWorker: return "sleep_worker";
    case DecisionKind::ScaleOut: return "scale_out";
  }
  return "?";
}

struct DecisionRecord {
  SimTime at;
  CvmId cvm = 0;
  DecisionKind kind = DecisionKind::WakeWorker;
  std::optional<VcpuIndex> vcpu;
};

struct TickDecision {
  bool wake = false;
  bool sleep = false;
  bool scale_out = false;
};

// Threshold policy for one sampling tick. Exactly one direction can fire:
// at or above the wake threshold a dormant worker is woken (or, with none
// left, `high_streak` saturated ticks request a new VM); at or below the
// sleep threshold one worker is put to sleep. The band in between is a dead
// zone that resets the scale-out streak.
inline TickDecision decide_tick(const SchedulerPolicy& p, double utilization, bool has_dormant,
                                std::uint32_t& high_streak) {
  TickDecision d;
  if (utilization >= p.wake_threshold) {
    if (has_dormant) {
      d.wake = true;
      high_streak = 0;
    } else if (++high_streak >= p.scale_out_after_ticks) {
      d.scale_out = true;
      high_streak = 0;
    }
    return d;
  }
  high_streak = 0;
  if (utilization <= p.sleep_threshold) d.sleep = true;
  return d;
}

struct TaskOutcome {
  Task task;
  std::optional<SimTime> started;
  std::optional<SimTime> finished;
  std::optional<GlobalVcpuId> vcpu;
};

struct FleetBuild {
  SamplerConfig sampler;
  SchedulerPolicy policy;
  TransitionLatencies latencies;
  FleetConfig fleet;
  ExecPolicy exec;  // `lanes` is overridden per strategy
  std::vector<CvmConfig> base_cvms;
};

// The hypervisor side: owns every CVM, routes protocol messages, runs the
// per-CVM load sampler and threshold scheduler, and admits tasks according to
// the scaling strategy. Elastic strategies (worker_vcpu, hotplug,
// backup_vcpu) boot the configured CVMs up front and resize them; fixed
// strategies ignore the configured CVMs and provision containers from the
// fleet template on demand.
class Fleet {
 public:
  Fleet(Engine& engine, TimelineRecorder& recorder, FleetBuild build)
      : engine_(engine), recorder_(recorder), build_(std::move(build)) {
    build_.exec.message_delivery = build_.latencies.message_delivery;
  }

  Fleet(const Fleet&) = delete;
  Fleet& operator=(const Fleet&) = delete;

  void start(const std::vector<Task>& tasks) {
    tasks_total_ = tasks.size();
    arrivals_remaining_ = tasks.size();
    if (is_fixed(build_.fleet.strategy)) {
      // Pre-provisioned containers, ready at t=0. FixedColdStart still tears
      // each one down after its single task.
      for (std::uint32_t i = 0; i < build_.fleet.warm_pool_size; ++i) {
        if (!vcpu_budget_allows()) break;
        launch_from_template("", SimTime::zero());
      }
    } else {
      for (const CvmConfig& cfg : build_.base_cvms) {
        next_cvm_id_ = std::max(next_cvm_id_, cfg.id + 1);
        boot_cvm(cfg);
      }
    }
    for (const Task& task : tasks) {
      outcomes_.emplace(task.id, TaskOutcome{task, std::nullopt, std::nullopt, std::nullopt});
      engine_.schedule(task.arrival, EventKind::TaskArrival, task.id, [this, task] { on_arrival(task); });
    }
  }

  // --- results ------------------------------------------------------------

  const TransitionTally& tally() const { return tally_; }
  const std::vector<ProtocolMessage>& messages() const { return messages_; }
  const std::vector<SampleRecord>& samples() const { return samples_; }
  const std::vector<DecisionRecord>& decisions() const { return decisions_; }
  std::uint64_t ticks_total() const { return ticks_total_; }
  SimTime sampler_cost_total() const { return sampler_cost_total_; }
  std::size_t tasks_total() const { return tasks_total_; }
  std::size_t tasks_completed() const { return completed_; }
  bool shutdown_completed() const { return shutdown_done_; }

  std::vector<TaskOutcome> task_outcomes() const {
    std::vector<TaskOutcome> out;
    out.reserve(outcomes_.size());
    for (const auto& [id, o] : outcomes_) out.push_back(o);
    return out;
  }

  std::vector<const Cvm*> cvms() const {
    std::vector<const Cvm*> out;
    out.reserve(cvms_.size());
    for (const auto& [id, cvm] : cvms_) out.push_back(cvm.get());
    return out;
  }

 private:
  // --- admission ----------------------------------------------------------

  void on_arrival(const Task& task) {
    --arrivals_remaining_;
    if (is_fixed(build_.fleet.strategy))
      admit_fixed(task);
    else
      admit_elastic(task);
  }

  // Least-loaded CVM owned by the task's user; before any owned CVM has
  // booted the task waits fleet-side.
  void admit_elastic(const Task& task) {
    Cvm* best = nullptr;
    for (auto& [id, cvm] : cvms_) {
      if (cvm->torn_down() || !cvm->booted() || cvm->config().owner != task.user) continue;
      if (!best || cvm->load() < best->load()) best = cvm.get();
    }
    if (best)
      best->bind_task(task);
    else
      fifo_.push_back(task);
  }

  void admit_fixed(const Task& task) {
    if (Cvm* idle = idle_container_for(task.user)) {
      idle->adopt_owner(task.user);
      idle->bind_task(task);
      return;
    }
    if (vcpu_budget_allows()) {
      Cvm& cvm = launch_from_template(task.user, build_.fleet.cold_boot_latency);
      assigned_[cvm.config().id] = task;
      return;
    }
    fifo_.push_back(task);
  }

  Cvm* idle_container_for(const std::string& user) {
    for (auto& [id, cvm] : cvms_) {
      if (cvm->torn_down() || !cvm->booted() || cvm->load() != 0) continue;
      if (cvm->config().owner.empty() || cvm->config().owner == user) return cvm.get();
    }
    return nullptr;
  }

  // --- provisioning -------------------------------------------------------

  std::uint64_t vcpu_budget() const {
    return std::uint64_t{build_.fleet.max_cvms} *
           (build_.fleet.cvm_template.regular_vcpus + build_.fleet.cvm_template.worker_vcpus);
  }

  std::uint64_t vcpus_in_use() const {
    std::uint64_t used = 0;
    for (const auto& [id, cvm] : cvms_)
      if (!cvm->torn_down()) used += cvm->config().regular_vcpus + cvm->config().worker_vcpus;
    return used;
  }

  bool vcpu_budget_allows() const {
    const CvmTemplate& t = build_.fleet.cvm_template;
    return vcpus_in_use() + t.regular_vcpus + t.worker_vcpus <= vcpu_budget();
  }

  Cvm& launch_from_template(const std::string& owner, SimTime boot_latency) {
    CvmConfig cfg;
    cfg.id = next_cvm_id_++;
    cfg.regular_vcpus = build_.fleet.cvm_template.regular_vcpus;
    cfg.worker_vcpus = build_.fleet.cvm_template.worker_vcpus;
    cfg.boot_latency = boot_latency;
    cfg.owner = owner;
    return boot_cvm(cfg);
  }

  Cvm& boot_cvm(const CvmConfig& cfg) {
    CvmHooks hooks;
    hooks.deliver_message = [this](const ProtocolMessage& m) { on_message(m); };
    hooks.booted = [this](CvmId id) { on_booted(id); };
    hooks.task_started = [this](const Task& t, GlobalVcpuId v, SimTime at) {
      TaskOutcome& o = outcomes_.at(t.id);
      o.started = at;
      o.vcpu = v;
    };
    hooks.task_finished = [this](const Task& t, GlobalVcpuId v, SimTime at) { on_task_finished(t, v, at); };
    hooks.maybe_quiesce = [this](CvmId, SimTime) { maybe_shutdown(); };
    ExecPolicy policy = build_.exec;
    policy.lanes = lanes_for(build_.fleet.strategy);
    auto [it, inserted] = cvms_.emplace(cfg.id, std::make_unique<Cvm>(engine_, recorder_, tally_, std::move(hooks),
                                                                      cfg, policy));
    if (!inserted) throw std::logic_error("duplicate cvm id " + std::to_string(cfg.id));
    ++boots_in_flight_;
    it->second->begin_boot();
    return *it->second;
  }

  static LaneControl lanes_for(Strategy s) {
    switch (s) {
      case Strategy::Hotplug: return LaneControl::Hotplug;
      case Strategy::BackupVcpu: return LaneControl::AlwaysOn;
      default: return LaneControl::WorkerProtocol;
    }
  }

  // --- protocol handling ----------------------------------------------------

  void on_message(const ProtocolMessage& m) {
    ProtocolMessage logged = m;
    logged.time = engine_.now();
    messages_.push_back(logged);
    Cvm& cvm = *cvms_.at(m.cvm);
    const RegistryDelta delta = cvm.registry().handle_message(m);
    if (delta.vm_removed) {
      drop_tick_chain(m.cvm);
      return;
    }
    if (m.kind != MessageKind::Checkin) return;
    const VcpuIndex v = *m.vcpu;
    cvm.note_checkin_delivered(v);
    // Deployment handshake and requested sleeps park the worker right away;
    // a routine post-task CHECKIN waits for the sampling tick policy.
    if (cvm.registry().pending_sleep(v) || !cvm.ever_woken(v))
      cvm.begin_sleep(v, build_.latencies.sleep);
    else
      cvm.after_checkin(v);
  }

  void on_booted(CvmId id) {
    --boots_in_flight_;
    if (scale_out_cvms_.count(id)) scale_out_in_flight_ = false;
    Cvm& cvm = *cvms_.at(id);
    schedule_tick(id, engine_.now() + build_.sampler.interval);
    if (auto it = assigned_.find(id); it != assigned_.end()) {
      Task task = it->second;
      assigned_.erase(it);
      cvm.adopt_owner(task.user);
      cvm.bind_task(task);
    }
    drain_fifo_into(cvm);
  }

  // Give waiting tasks to a CVM that just became able to take them. Elastic
  // tasks go back through least-loaded admission; a container takes one.
  void drain_fifo_into(Cvm& cvm) {
    if (cvm.torn_down() || !cvm.booted()) return;
    for (auto it = fifo_.begin(); it != fifo_.end();) {
      const bool owner_ok = cvm.config().owner.empty() || cvm.config().owner == it->user;
      if (!owner_ok) {
        ++it;
        continue;
      }
      if (is_fixed(build_.fleet.strategy)) {
        if (cvm.load() != 0) return;  // containers take one task at a time
        cvm.adopt_owner(it->user);
        Task task = *it;
        fifo_.erase(it);
        cvm.bind_task(task);
        return;
      }
      Task task = *it;
      it = fifo_.erase(it);
      admit_elastic(task);
    }
  }

  void on_task_finished(const Task& task, GlobalVcpuId v, SimTime at) {
    TaskOutcome& o = outcomes_.at(task.id);
    o.finished = at;
    ++completed_;
    if (build_.fleet.strategy == Strategy::FixedColdStart) {
      Cvm& cvm = *cvms_.at(v.cvm);
      cvm.shutdown();  // single-use container
      if (!fifo_.empty() && vcpu_budget_allows()) {
        Task next = fifo_.front();
        fifo_.pop_front();
        Cvm& fresh = launch_from_template(next.user, build_.fleet.cold_boot_latency);
        assigned_[fresh.config().id] = next;
      }
    } else if (build_.fleet.strategy == Strategy::FixedWarmKeep) {
      drain_fifo_into(*cvms_.at(v.cvm));
    }
  }

  // --- sampler and threshold scheduler --------------------------------------

  void schedule_tick(CvmId id, SimTime at) {
    tick_events_[id] = engine_.schedule(at, EventKind::SamplingTick, id, [this, id] { on_tick(id); });
  }

  void drop_tick_chain(CvmId id) {
    if (auto it = tick_events_.find(id); it != tick_events_.end()) {
      engine_.cancel(it->second);
      tick_events_.erase(it);
    }
  }

  void on_tick(CvmId id) {
    Cvm& cvm = *cvms_.at(id);
    if (cvm.torn_down()) return;
    ++ticks_total_;
    sampler_cost_total_ += build_.sampler.per_vm_cost;
    SampleRecord rec{id, cvm.take_load_sample()};
    samples_.push_back(rec);

    const TickDecision d = decide_tick(build_.policy, rec.sample.utilization, cvm.any_dormant(), high_streak_[id]);
    if (d.wake) act_wake(cvm);
    if (d.sleep) act_sleep(cvm);
    if (d.scale_out) act_scale_out(cvm);

    if (run_settled()) {
      maybe_shutdown();
      return;  // sampling stops once nothing can change the load anymore
    }
    schedule_tick(id, engine_.now() + build_.sampler.interval);
  }

  void act_wake(Cvm& cvm) {
    const bool hotplug = build_.fleet.strategy == Strategy::Hotplug;
    for (std::uint32_t i = 0; i < build_.policy.max_actions_per_tick; ++i) {
      const std::optional<VcpuIndex> target = cvm.lowest_dormant();
      if (!target) return;
      if (hotplug)
        cvm.begin_plug(*target, build_.latencies.hotplug_add);
      else
        cvm.begin_wake(*target, build_.latencies.wake);
      decisions_.push_back({engine_.now(), cvm.config().id, DecisionKind::WakeWorker, *target});
    }
  }

  void act_sleep(Cvm& cvm) {
    const bool hotplug = build_.fleet.strategy == Strategy::Hotplug;
    for (std::uint32_t i = 0; i < build_.policy.max_actions_per_tick; ++i) {
      const std::optional<VcpuIndex> target = cvm.highest_sleep_eligible();
      if (!target) return;
      if (hotplug)
        cvm.begin_unplug(*target, build_.latencies.hotplug_remove);
      else if (cvm.registry().state(*target) == VcpuLifecycleState::WorkerActive)
        cvm.request_sleep_active(*target);  // honored at the worker's next CHECKIN
      else
        cvm.begin_sleep(*target, build_.latencies.sleep);
      decisions_.push_back({engine_.now(), cvm.config().id, DecisionKind::SleepWorker, *target});
    }
  }

  void act_scale_out(Cvm& pressured) {
    if (is_fixed(build_.fleet.strategy)) return;  // fixed fleets grow at admission instead
    if (scale_out_in_flight_ || !vcpu_budget_allows()) return;
    scale_out_in_flight_ = true;
    Cvm& fresh = launch_from_template(pressured.config().owner, build_.fleet.cvm_template.boot_latency);
    scale_out_cvms_.insert(fresh.config().id);
    decisions_.push_back({engine_.now(), fresh.config().id, DecisionKind::ScaleOut, std::nullopt});
  }

  // --- termination -----------------------------------------------------------

  bool run_settled() const {
    if (arrivals_remaining_ > 0 || boots_in_flight_ > 0) return false;
    for (const auto& [id, cvm] : cvms_) {
      if (cvm->torn_down()) continue;
      if (!cvm->idle_quiescent() && !cvm->stalled()) return false;
    }
    return true;
  }

  // Graceful deregistration once the run is over: every arrival admitted,
  // nothing queued anywhere, all workers parked. Stranded work (tasks stuck
  // on dormant vCPUs) ends the run without deregistering.
  void maybe_shutdown() {
    if (shutdown_done_ || tasks_total_ == 0) return;
    if (arrivals_remaining_ > 0 || boots_in_flight_ > 0 || !fifo_.empty()) return;
    std::vector<Cvm*> live;
    for (auto& [id, cvm] : cvms_) {
      if (cvm->torn_down()) continue;
      if (!cvm->idle_quiescent()) return;
      live.push_back(cvm.get());
    }
    shutdown_done_ = true;
    for (Cvm* cvm : live) cvm->shutdown();
  }

  Engine& engine_;
  TimelineRecorder& recorder_;
  FleetBuild build_;
  TransitionTally tally_;
  std::map<CvmId, std::unique_ptr<Cvm>> cvms_;
  std::map<CvmId, EventId> tick_events_;
  std::map<CvmId, std::uint32_t> high_streak_;
  std::map<CvmId, Task> assigned_;  // container -> task it was launched for
  std::map<TaskId, TaskOutcome> outcomes_;
  std::set<CvmId> scale_out_cvms_;
  std::deque<Task> fifo_;
  std::vector<ProtocolMessage> messages_;
  std::vector<SampleRecord> samples_;
  std::vector<DecisionRecord> decisions_;
  CvmId next_cvm_id_ = 0;
  std::size_t tasks_total_ = 0;
  std::size_t arrivals_remaining_ = 0;
  std::size_t completed_ = 0;
  std::uint32_t boots_in_flight_ = 0;
  bool scale_out_in_flight_ = false;
  bool shutdown_done_ = false;
  std::uint64_t ticks_total_ = 0;
  SimTime sampler_cost_total_;
};

}  // namespace ecvm
