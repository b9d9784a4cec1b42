#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecvm/engine.hpp"
#include "ecvm/protocol.hpp"
#include "ecvm/time.hpp"
#include "ecvm/timeline.hpp"
#include "ecvm/workload.hpp"

namespace ecvm {

struct CvmConfig {
  CvmId id = 0;
  std::uint32_t regular_vcpus = 1;  // m, indices [0, m)
  std::uint32_t worker_vcpus = 0;   // n, indices [m, m+n)
  SimTime boot_latency;
  std::string owner = "u0";
};

// Worker bitmap handed to the guest at deployment; bit i set means vCPU i is
// a Worker vCPU.
struct WorkerMask {
  std::uint64_t bits = 0;

  static WorkerMask for_config(std::uint32_t m, std::uint32_t n) {
    if (m < 1) throw std::invalid_argument("CVM needs at least one regular vCPU");
    if (m + n > 64) throw std::invalid_argument("vCPU count exceeds mask width");
    WorkerMask mask;
    for (std::uint32_t i = m; i < m + n; ++i) mask.bits |= (std::uint64_t{1} << i);
    return mask;
  }

  bool is_worker(VcpuIndex i) const { return i < 64 && (bits >> i) & 1; }
};

inline bool admissible_on(const Task& task, const CvmConfig& cfg) { return task.user == cfg.owner; }

class NotBooted : public std::logic_error {
 public:
  explicit NotBooted(CvmId id) : std::logic_error("cvm " + std::to_string(id) + " has not finished booting") {}
};

class NotAdmissible : public std::logic_error {
 public:
  NotAdmissible(CvmId id, const std::string& user)
      : std::logic_error("cvm " + std::to_string(id) + " does not admit user " + user) {}
};

class TasksPending : public std::logic_error {
 public:
  explicit TasksPending(CvmId id) : std::logic_error("cvm " + std::to_string(id) + " shut down with tasks pending") {}
};

// How tasks reach vCPUs.
//  UpfrontQueues: placement happens at bind time into per-vCPU queues
//  (regular preferred when idle, else least-loaded worker thread).
//  CentralQueue: one run list per CVM; vCPUs take the head task whenever they
//  become ready (at bind, wake, or task completion).
enum class DispatchMode { UpfrontQueues, CentralQueue };

// How lanes above index m are controlled.
//  WorkerProtocol: registry-backed worker lifecycle with CHECKIN gating.
//  Hotplug: plug/unplug with hotplug latencies, no protocol messages.
//  AlwaysOn: backup vCPUs, active for the whole run.
enum class LaneControl { WorkerProtocol, Hotplug, AlwaysOn };

struct ExecPolicy {
  DispatchMode dispatch = DispatchMode::UpfrontQueues;
  LaneControl lanes = LaneControl::WorkerProtocol;
  bool preemptive_regular = false;
  SimTime quantum = SimTime::ms(10);
  SimTime message_delivery;  // zero delivers synchronously
};

struct LoadSample {
  SimTime window_start;
  SimTime window_end;
  SimTime busy_total;
  std::uint32_t active_count = 0;
  double raw_load = 0.0;
  double utilization = 0.0;
};

struct TransitionTally {
  std::uint64_t wake_count = 0;
  std::uint64_t sleep_count = 0;
  SimTime wake_total;
  SimTime sleep_total;
};

struct CvmHooks {
  std::function<void(const ProtocolMessage&)> deliver_message;
  std::function<void(CvmId)> booted;
  std::function<void(const Task&, GlobalVcpuId, SimTime)> task_started;
  std::function<void(const Task&, GlobalVcpuId, SimTime)> task_finished;
  std::function<void(CvmId, SimTime)> maybe_quiesce;
};

// One confidential VM: m regular vCPUs and n elastic lanes. Owns the
// protocol registry (the guest's SEV state is the ground truth both sides
// see) and all execution bookkeeping. The hypervisor drives transitions
// through begin_wake/begin_sleep/request_sleep_active and reacts to the
// messages this class emits.
class Cvm {
 public:
  Cvm(Engine& engine, TimelineRecorder& recorder, TransitionTally& tally, CvmHooks hooks, CvmConfig config,
      ExecPolicy policy)
      : engine_(engine),
        recorder_(recorder),
        tally_(tally),
        hooks_(std::move(hooks)),
        config_(config),
        policy_(policy),
        mask_(WorkerMask::for_config(config.regular_vcpus, config.worker_vcpus)),
        registry_(config.id) {
    const std::uint32_t total = config_.regular_vcpus + config_.worker_vcpus;
    for (VcpuIndex i = 0; i < total; ++i) {
      Lane lane;
      lane.index = i;
      lane.kind = mask_.is_worker(i) ? VcpuKind::Worker : VcpuKind::Regular;
      lanes_.push_back(lane);
    }
  }

  Cvm(const Cvm&) = delete;
  Cvm& operator=(const Cvm&) = delete;

  const CvmConfig& config() const { return config_; }
  const WorkerMask& worker_mask() const { return mask_; }

  // Pre-provisioned pool containers start unowned and take the first user
  // they serve.
  void adopt_owner(const std::string& user) {
    if (!config_.owner.empty() && config_.owner != user) throw NotAdmissible(config_.id, user);
    config_.owner = user;
  }
  VcpuRegistry& registry() { return registry_; }
  const VcpuRegistry& registry() const { return registry_; }
  bool booted() const { return booted_; }
  bool torn_down() const { return torn_down_; }
  SimTime boot_done_at() const { return boot_done_at_; }

  void begin_boot() {
    const SimTime now = engine_.now();
    for (Lane& lane : lanes_)
      recorder_.register_vcpu(gid(lane.index), lane.kind, now, SegmentState::Booting);
    engine_.schedule(now + config_.boot_latency, EventKind::BootDone, config_.id, [this] { on_boot_done(); });
  }

  // Admission is the fleet's job; this binds an already-admitted task.
  void bind_task(const Task& task) {
    if (!booted_) throw NotBooted(config_.id);
    if (torn_down_) throw NotBooted(config_.id);
    if (!admissible_on(task, config_)) throw NotAdmissible(config_.id, task.user);
    tasks_[task.id] = task;
    remaining_[task.id] = task.duration;
    if (policy_.dispatch == DispatchMode::CentralQueue) {
      central_.push_back(task.id);
      dispatch_central();
    } else {
      place_upfront(task.id);
    }
  }

  // --- hypervisor-driven transitions -------------------------------------

  void begin_wake(VcpuIndex v, SimTime latency) {
    Lane& lane = worker_lane(v);
    if (registry_.state(v) != VcpuLifecycleState::WorkerDormant || lane.transition_in_flight)
      throw ProtocolViolation(config_.id, v, registry_.state(v), LifecycleInput::Wake, "wake target not dormant");
    lane.transition_in_flight = true;
    lane.ever_woken = true;
    const SimTime now = engine_.now();
    recorder_.set_state(gid(v), now, SegmentState::TransitionWake);
    engine_.schedule(now + latency, EventKind::TransitionDone, config_.id, [this, v, latency] {
      Lane& l = lanes_[v];
      l.transition_in_flight = false;
      registry_.apply_action(v, HypervisorAction::Wake);
      ++tally_.wake_count;
      tally_.wake_total += latency;
      recorder_.set_state(gid(v), engine_.now(), SegmentState::ActiveIdle);
      if (!try_start(l)) emit_checkin(l);
      hooks_.maybe_quiesce(config_.id, engine_.now());
    });
  }

  void begin_sleep(VcpuIndex v, SimTime latency) {
    Lane& lane = worker_lane(v);
    if (registry_.state(v) != VcpuLifecycleState::WorkerIdleCheckedIn || lane.transition_in_flight)
      throw ProtocolViolation(config_.id, v, registry_.state(v), LifecycleInput::Sleep, "sleep target not checked in");
    lane.transition_in_flight = true;
    const SimTime now = engine_.now();
    recorder_.set_state(gid(v), now, SegmentState::TransitionSleep);
    engine_.schedule(now + latency, EventKind::TransitionDone, config_.id, [this, v, latency] {
      Lane& l = lanes_[v];
      l.transition_in_flight = false;
      registry_.apply_action(v, HypervisorAction::Sleep);
      ++tally_.sleep_count;
      tally_.sleep_total += latency;
      recorder_.set_state(gid(v), engine_.now(), SegmentState::Dormant);
      hooks_.maybe_quiesce(config_.id, engine_.now());
    });
  }

  // Sleep requested while the worker is mid-execution: arm pending_sleep; the
  // worker's next CHECKIN consumes it. The vCPU is never stopped here.
  void request_sleep_active(VcpuIndex v) {
    worker_lane(v);
    if (registry_.state(v) != VcpuLifecycleState::WorkerActive)
      throw ProtocolViolation(config_.id, v, registry_.state(v), LifecycleInput::Sleep, "not an active worker");
    registry_.apply_action(v, HypervisorAction::Sleep);
  }

  // --- hotplug lane control (no protocol traffic) ------------------------

  void begin_plug(VcpuIndex v, SimTime latency) {
    Lane& lane = hotplug_lane(v);
    if (lane.plugged || lane.transition_in_flight) throw std::logic_error("plug target not unplugged");
    lane.transition_in_flight = true;
    const SimTime now = engine_.now();
    recorder_.set_state(gid(v), now, SegmentState::TransitionWake);
    engine_.schedule(now + latency, EventKind::TransitionDone, config_.id, [this, v, latency] {
      Lane& l = lanes_[v];
      l.transition_in_flight = false;
      l.plugged = true;
      ++tally_.wake_count;
      tally_.wake_total += latency;
      recorder_.set_state(gid(v), engine_.now(), SegmentState::ActiveIdle);
      try_start(l);
      hooks_.maybe_quiesce(config_.id, engine_.now());
    });
  }

  // Removal drains the lane's queue to the remaining vCPUs first; only idle
  // lanes are ever unplugged.
  void begin_unplug(VcpuIndex v, SimTime latency) {
    Lane& lane = hotplug_lane(v);
    if (!lane.plugged || lane.transition_in_flight || lane.running)
      throw std::logic_error("unplug target not idle");
    lane.transition_in_flight = true;
    std::deque<TaskId> drained = std::move(lane.queue);
    lane.queue.clear();
    const SimTime now = engine_.now();
    recorder_.set_state(gid(v), now, SegmentState::TransitionSleep);
    for (TaskId t : drained) place_upfront(t, v);
    engine_.schedule(now + latency, EventKind::TransitionDone, config_.id, [this, v, latency] {
      Lane& l = lanes_[v];
      l.transition_in_flight = false;
      l.plugged = false;
      ++tally_.sleep_count;
      tally_.sleep_total += latency;
      recorder_.set_state(gid(v), engine_.now(), SegmentState::Dormant);
      hooks_.maybe_quiesce(config_.id, engine_.now());
    });
  }

  // --- CHECKIN plumbing ---------------------------------------------------

  void note_checkin_delivered(VcpuIndex v) { lanes_.at(v).checkin_in_flight = false; }

  // Called by the hypervisor after it processed a CHECKIN and chose not to
  // park the worker: pick queued work back up if any arrived meanwhile.
  void after_checkin(VcpuIndex v) {
    Lane& lane = lanes_.at(v);
    if (registry_.state(v) == VcpuLifecycleState::WorkerIdleCheckedIn && !lane.transition_in_flight) try_start(lane);
  }

  bool ever_woken(VcpuIndex v) const { return lanes_.at(v).ever_woken; }
  bool transition_in_flight(VcpuIndex v) const { return lanes_.at(v).transition_in_flight; }

  // --- sampling -----------------------------------------------------------

  // Busy CPU time of active vCPUs since the previous sample; dormant vCPUs
  // are excluded from both the sum and the count, and every accumulator is
  // reset afterward.
  LoadSample take_load_sample() {
    const SimTime now = engine_.now();
    LoadSample s;
    s.window_start = last_sample_;
    s.window_end = now;
    for (Lane& lane : lanes_) {
      SimTime busy = lane.busy_accum;
      if (lane.running) {
        busy += now - lane.busy_mark;
        lane.busy_mark = now;
      }
      lane.busy_accum = SimTime::zero();
      if (!lane_active_for_sampling(lane)) continue;
      ++s.active_count;
      s.busy_total += busy;
    }
    const SimTime interval = now - last_sample_;
    last_sample_ = now;
    if (interval > SimTime::zero() && s.active_count > 0) {
      s.raw_load = static_cast<double>(s.busy_total.count()) / static_cast<double>(interval.count());
      s.utilization = s.raw_load / static_cast<double>(s.active_count);
    }
    return s;
  }

  // --- scheduler queries ---------------------------------------------------

  std::optional<VcpuIndex> lowest_dormant() const {
    for (const Lane& lane : lanes_) {
      if (lane.kind != VcpuKind::Worker || lane.transition_in_flight) continue;
      if (policy_.lanes == LaneControl::Hotplug ? !lane.plugged
                                                : registry_.state(lane.index) == VcpuLifecycleState::WorkerDormant)
        return lane.index;
    }
    return std::nullopt;
  }

  std::optional<VcpuIndex> highest_sleep_eligible() const {
    for (auto it = lanes_.rbegin(); it != lanes_.rend(); ++it) {
      const Lane& lane = *it;
      if (lane.kind != VcpuKind::Worker || lane.transition_in_flight) continue;
      if (policy_.lanes == LaneControl::Hotplug) {
        if (lane.plugged && !lane.running) return lane.index;
        continue;
      }
      const VcpuLifecycleState st = registry_.state(lane.index);
      if (registry_.pending_sleep(lane.index)) continue;
      if (st == VcpuLifecycleState::WorkerActive || st == VcpuLifecycleState::WorkerIdleCheckedIn) return lane.index;
    }
    return std::nullopt;
  }

  bool any_dormant() const { return lowest_dormant().has_value(); }

  // --- quiescence and shutdown ---------------------------------------------

  bool busy_or_pending() const {
    for (const Lane& lane : lanes_)
      if (lane.running || !lane.queue.empty() || lane.transition_in_flight || lane.checkin_in_flight) return true;
    return !central_.empty();
  }

  // True once nothing can change without outside input: no work anywhere, no
  // in-flight transition, and every elastic lane parked.
  bool idle_quiescent() const {
    if (!booted_ || torn_down_ || busy_or_pending()) return false;
    return lanes_parked();
  }

  // True when queued work can never run again without new load: everything
  // parked but per-lane queues still hold tasks bound to dormant workers.
  bool stalled() const {
    if (!booted_ || torn_down_) return false;
    for (const Lane& lane : lanes_)
      if (lane.running || lane.transition_in_flight || lane.checkin_in_flight) return false;
    if (!central_.empty()) return false;
    if (!lanes_parked()) return false;
    for (const Lane& lane : lanes_)
      if (!lane.queue.empty()) return true;
    return false;
  }

  void shutdown() {
    if (torn_down_) return;
    if (busy_or_pending()) throw TasksPending(config_.id);
    const SimTime now = engine_.now();
    if (policy_.lanes == LaneControl::WorkerProtocol) {
      for (Lane& lane : lanes_)
        if (lane.kind == VcpuKind::Worker && registry_.state(lane.index) != VcpuLifecycleState::Deregistered)
          send_message(MessageKind::DeregWorker, lane.index);
    }
    send_message(MessageKind::Deregister, std::nullopt);
    for (Lane& lane : lanes_) recorder_.close(gid(lane.index), now);
    torn_down_ = true;
  }

  std::size_t load() const {
    std::size_t n = central_.size();
    for (const Lane& lane : lanes_) n += lane.queue.size() + (lane.running ? 1 : 0);
    return n;
  }

  std::size_t running_count() const {
    std::size_t n = 0;
    for (const Lane& lane : lanes_)
      if (lane.running) ++n;
    return n;
  }

  bool idle_regular_available() const {
    for (const Lane& lane : lanes_)
      if (placement_kind(lane) == VcpuKind::Regular && !lane.running && lane.queue.empty()) return true;
    return false;
  }

 private:
  struct Lane {
    VcpuIndex index = 0;
    VcpuKind kind = VcpuKind::Regular;
    std::deque<TaskId> queue;
    std::optional<TaskId> running;
    SimTime slice_start;
    SimTime busy_accum;
    SimTime busy_mark;
    bool transition_in_flight = false;
    bool checkin_in_flight = false;
    bool ever_woken = false;
    bool plugged = true;
    EventId pending_event = 0;
    bool pending_event_valid = false;
  };

  GlobalVcpuId gid(VcpuIndex v) const { return GlobalVcpuId{config_.id, v}; }

  Lane& worker_lane(VcpuIndex v) {
    if (v >= lanes_.size() || lanes_[v].kind != VcpuKind::Worker || policy_.lanes != LaneControl::WorkerProtocol)
      throw std::logic_error("vcpu " + std::to_string(v) + " is not a protocol worker on cvm " +
                             std::to_string(config_.id));
    return lanes_[v];
  }

  Lane& hotplug_lane(VcpuIndex v) {
    if (v >= lanes_.size() || lanes_[v].kind != VcpuKind::Worker || policy_.lanes != LaneControl::Hotplug)
      throw std::logic_error("vcpu " + std::to_string(v) + " is not a hotplug lane on cvm " +
                             std::to_string(config_.id));
    return lanes_[v];
  }

  // Backup lanes place like regulars; hotplug/worker lanes are the elastic
  // pool.
  VcpuKind placement_kind(const Lane& lane) const {
    if (policy_.lanes == LaneControl::AlwaysOn) return VcpuKind::Regular;
    return lane.kind;
  }

  bool lanes_parked() const {
    for (const Lane& lane : lanes_) {
      if (lane.kind != VcpuKind::Worker) continue;
      if (policy_.lanes == LaneControl::AlwaysOn) continue;
      if (policy_.lanes == LaneControl::Hotplug) {
        if (lane.plugged) return false;
        continue;
      }
      const VcpuLifecycleState st = registry_.state(lane.index);
      if (st != VcpuLifecycleState::WorkerDormant && st != VcpuLifecycleState::Deregistered) return false;
    }
    return true;
  }

  bool lane_active_for_sampling(const Lane& lane) const {
    if (!booted_ || torn_down_) return false;
    if (placement_kind(lane) == VcpuKind::Regular) return true;
    if (policy_.lanes == LaneControl::Hotplug) return lane.plugged;
    const VcpuLifecycleState st = registry_.state(lane.index);
    return st == VcpuLifecycleState::WorkerActive || st == VcpuLifecycleState::WorkerIdleCheckedIn;
  }

  void on_boot_done() {
    const SimTime now = engine_.now();
    booted_ = true;
    boot_done_at_ = now;
    last_sample_ = now;
    for (Lane& lane : lanes_) {
      if (lane.kind == VcpuKind::Regular || policy_.lanes == LaneControl::AlwaysOn) {
        send_message(MessageKind::RegMain, lane.index);
        recorder_.set_state(gid(lane.index), now, SegmentState::ActiveIdle);
      } else if (policy_.lanes == LaneControl::Hotplug) {
        // Pluggable lanes start offline; no protocol traffic for them.
        lane.plugged = false;
        recorder_.set_state(gid(lane.index), now, SegmentState::Dormant);
      } else {
        send_message(MessageKind::RegWorker, lane.index);
        recorder_.set_state(gid(lane.index), now, SegmentState::ActiveIdle);
      }
    }
    if (policy_.lanes == LaneControl::WorkerProtocol) {
      for (Lane& lane : lanes_)
        if (lane.kind == VcpuKind::Worker) emit_checkin(lane);
    }
    hooks_.booted(config_.id);
  }

  void send_message(MessageKind kind, std::optional<VcpuIndex> vcpu) {
    const ProtocolMessage msg{engine_.now(), config_.id, vcpu, kind};
    if (policy_.message_delivery == SimTime::zero()) {
      hooks_.deliver_message(msg);
    } else {
      engine_.schedule(engine_.now() + policy_.message_delivery, EventKind::MessageDelivery, config_.id,
                       [this, msg] { hooks_.deliver_message(msg); });
    }
  }

  void emit_checkin(Lane& lane) {
    lane.checkin_in_flight = true;
    send_message(MessageKind::Checkin, lane.index);
  }

  // Upfront placement: a free regular slot wins; otherwise the least-loaded
  // elastic lane (queued + running count, lowest index on ties); with no
  // elastic lanes, the least-loaded regular.
  void place_upfront(TaskId task, std::optional<VcpuIndex> excluded = std::nullopt) {
    Lane* free_regular = nullptr;
    for (Lane& lane : lanes_) {
      if (placement_kind(lane) != VcpuKind::Regular || lane.index == excluded) continue;
      if (!lane.running && lane.queue.empty()) {
        free_regular = &lane;
        break;
      }
    }
    if (free_regular) {
      free_regular->queue.push_back(task);
      try_start(*free_regular);
      return;
    }
    Lane* target = nullptr;
    for (VcpuKind pool : {VcpuKind::Worker, VcpuKind::Regular}) {
      for (Lane& lane : lanes_) {
        if (placement_kind(lane) != pool || lane.index == excluded) continue;
        const std::size_t lane_load = lane.queue.size() + (lane.running ? 1 : 0);
        if (!target || lane_load < target->queue.size() + (target->running ? 1 : 0)) target = &lane;
      }
      if (target) break;
    }
    if (!target) throw std::logic_error("no placement target on cvm " + std::to_string(config_.id));
    target->queue.push_back(task);
    try_start(*target);
    if (policy_.preemptive_regular && placement_kind(*target) == VcpuKind::Regular && target->running)
      arm_preemption(*target);
  }

  void dispatch_central() {
    while (!central_.empty()) {
      Lane* server = nullptr;
      for (VcpuKind pool : {VcpuKind::Regular, VcpuKind::Worker}) {
        for (Lane& lane : lanes_) {
          if (placement_kind(lane) != pool || lane.running || !lane_ready_for_pickup(lane)) continue;
          server = &lane;
          break;
        }
        if (server) break;
      }
      if (!server) return;
      server->queue.push_back(central_.front());
      central_.pop_front();
      try_start(*server);
    }
  }

  bool lane_ready_for_pickup(const Lane& lane) const {
    if (lane.transition_in_flight || lane.checkin_in_flight || lane.running) return false;
    if (placement_kind(lane) == VcpuKind::Regular) return booted_;
    if (policy_.lanes == LaneControl::Hotplug) return lane.plugged;
    const VcpuLifecycleState st = registry_.state(lane.index);
    if (st == VcpuLifecycleState::WorkerActive) return true;
    return st == VcpuLifecycleState::WorkerIdleCheckedIn && !registry_.pending_sleep(lane.index);
  }

  // Starts the lane's next task if the lane may execute right now. Returns
  // whether something is running on the lane afterward.
  bool try_start(Lane& lane) {
    if (lane.running) return true;
    if (lane.transition_in_flight || lane.checkin_in_flight) return false;
    if (lane.queue.empty() && policy_.dispatch == DispatchMode::CentralQueue && !central_.empty() &&
        lane_ready_for_pickup(lane)) {
      lane.queue.push_back(central_.front());
      central_.pop_front();
    }
    if (lane.queue.empty()) return false;

    if (placement_kind(lane) == VcpuKind::Worker) {
      if (policy_.lanes == LaneControl::Hotplug) {
        if (!lane.plugged) return false;
      } else {
        const VcpuLifecycleState st = registry_.state(lane.index);
        if (st == VcpuLifecycleState::WorkerIdleCheckedIn) {
          if (registry_.pending_sleep(lane.index)) return false;
          registry_.resume(lane.index);
        } else if (st != VcpuLifecycleState::WorkerActive) {
          return false;
        } else if (registry_.pending_sleep(lane.index)) {
          return false;
        }
      }
    }

    const TaskId id = lane.queue.front();
    lane.queue.pop_front();
    start_slice(lane, id);
    return true;
  }

  void start_slice(Lane& lane, TaskId id) {
    const SimTime now = engine_.now();
    const Task& task = tasks_.at(id);
    const SimTime remaining = remaining_.at(id);
    lane.running = id;
    lane.slice_start = now;
    lane.busy_mark = now;
    recorder_.set_state(gid(lane.index), now, SegmentState::ActiveBusy, id);
    if (remaining == task.duration) hooks_.task_started(task, gid(lane.index), now);

    const bool sliced = policy_.preemptive_regular && placement_kind(lane) == VcpuKind::Regular &&
                        !lane.queue.empty() && remaining > policy_.quantum;
    const SimTime span = sliced ? policy_.quantum : remaining;
    const EventKind kind = sliced ? EventKind::QuantumExpiry : EventKind::TaskDone;
    const VcpuIndex v = lane.index;
    lane.pending_event =
        engine_.schedule(now + span, kind, config_.id, [this, v, kind] { on_slice_end(lanes_[v], kind); });
    lane.pending_event_valid = true;
  }

  // A task was queued behind a running preemptive regular: cap the current
  // slice at one quantum from its start.
  void arm_preemption(Lane& lane) {
    if (!lane.running || !lane.pending_event_valid) return;
    const SimTime now = engine_.now();
    const TaskId id = *lane.running;
    const SimTime rem = remaining_.at(id) - (now - lane.slice_start);
    if (rem <= policy_.quantum) return;  // finishes within a quantum anyway
    const SimTime slice_end = ecvm::max(now, lane.slice_start + policy_.quantum);
    if (!engine_.cancel(lane.pending_event)) return;
    const VcpuIndex v = lane.index;
    lane.pending_event = engine_.schedule(slice_end, EventKind::QuantumExpiry, config_.id,
                                          [this, v] { on_slice_end(lanes_[v], EventKind::QuantumExpiry); });
  }

  void on_slice_end(Lane& lane, EventKind kind) {
    const SimTime now = engine_.now();
    const TaskId id = *lane.running;
    lane.pending_event_valid = false;
    SimTime& rem = remaining_.at(id);
    rem -= now - lane.slice_start;
    lane.busy_accum += now - lane.busy_mark;
    lane.running.reset();

    if (kind == EventKind::QuantumExpiry && rem > SimTime::zero()) {
      lane.queue.push_back(id);
      try_start(lane);
      return;
    }

    const Task& task = tasks_.at(id);
    hooks_.task_finished(task, gid(lane.index), now);
    if (torn_down_) return;  // single-use container torn down by the hook
    on_task_done(lane);
    hooks_.maybe_quiesce(config_.id, now);
  }

  // Worker threads run back-to-back while work is queued and no sleep is
  // requested; otherwise they check in. Regular vCPUs never check in.
  void on_task_done(Lane& lane) {
    const bool is_protocol_worker = policy_.lanes == LaneControl::WorkerProtocol && lane.kind == VcpuKind::Worker;
    if (is_protocol_worker && registry_.pending_sleep(lane.index)) {
      recorder_.set_state(gid(lane.index), engine_.now(), SegmentState::ActiveIdle);
      emit_checkin(lane);
      return;
    }
    if (try_start(lane)) return;
    recorder_.set_state(gid(lane.index), engine_.now(), SegmentState::ActiveIdle);
    if (is_protocol_worker) emit_checkin(lane);
  }

  Engine& engine_;
  TimelineRecorder& recorder_;
  TransitionTally& tally_;
  CvmHooks hooks_;
  CvmConfig config_;
  ExecPolicy policy_;
  WorkerMask mask_;
  VcpuRegistry registry_;
  std::vector<Lane> lanes_;
  std::deque<TaskId> central_;
  std::map<TaskId, Task> tasks_;
  std::map<TaskId, SimTime> remaining_;
  SimTime last_sample_;
  SimTime boot_done_at_;
  bool booted_ = false;
  bool torn_down_ = false;
};

}  // namespace ecvm
