#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecvm/time.hpp"

namespace ecvm {

using CvmId = std::uint32_t;
using VcpuIndex = std::uint32_t;

enum class VcpuKind { Regular, Worker };

inline const char* to_string(VcpuKind k) { return k == VcpuKind::Regular ? "regular" : "worker"; }

enum class VcpuLifecycleState {
  Unregistered,
  RegisteredMain,
  WorkerActive,
  WorkerIdleCheckedIn,
  WorkerDormant,
  Deregistered,
};

inline const char* to_string(VcpuLifecycleState s) {
  switch (s) {
    case VcpuLifecycleState::Unregistered: return "Unregistered";
    case VcpuLifecycleState::RegisteredMain: return "RegisteredMain";
    case VcpuLifecycleState::WorkerActive: return "WorkerActive";
    case VcpuLifecycleState::WorkerIdleCheckedIn: return "WorkerIdleCheckedIn";
    case VcpuLifecycleState::WorkerDormant: return "WorkerDormant";
    case VcpuLifecycleState::Deregistered: return "Deregistered";
  }
  return "?";
}

// The five guest-to-hypervisor messages. DEREGISTER is VM-scoped and carries
// no vCPU id.
enum class MessageKind { RegMain, RegWorker, Checkin, DeregWorker, Deregister };

inline const char* wire_name(MessageKind k) {
  switch (k) {
    case MessageKind::RegMain: return "REG_MAIN";
    case MessageKind::RegWorker: return "REG_WORKER";
    case MessageKind::Checkin: return "CHECKIN";
    case MessageKind::DeregWorker: return "DEREG_WORKER";
    case MessageKind::Deregister: return "DEREGISTER";
  }
  return "?";
}

enum class HypervisorAction { Wake, Sleep };

inline const char* to_string(HypervisorAction a) { return a == HypervisorAction::Wake ? "Wake" : "Sleep"; }

// Every input that can move a vCPU through its lifecycle: the five protocol
// messages, the two hypervisor actions, and the guest-side Resume (a
// checked-in worker picking queued work back up, which involves no message).
enum class LifecycleInput {
  RegMain,
  RegWorker,
  Checkin,
  DeregWorker,
  Deregister,
  Wake,
  Sleep,
  Resume,
};

inline const char* to_string(LifecycleInput i) {
  switch (i) {
    case LifecycleInput::RegMain: return "REG_MAIN";
    case LifecycleInput::RegWorker: return "REG_WORKER";
    case LifecycleInput::Checkin: return "CHECKIN";
    case LifecycleInput::DeregWorker: return "DEREG_WORKER";
    case LifecycleInput::Deregister: return "DEREGISTER";
    case LifecycleInput::Wake: return "Wake";
    case LifecycleInput::Sleep: return "Sleep";
    case LifecycleInput::Resume: return "Resume";
  }
  return "?";
}

inline LifecycleInput to_input(MessageKind k) {
  switch (k) {
    case MessageKind::RegMain: return LifecycleInput::RegMain;
    case MessageKind::RegWorker: return LifecycleInput::RegWorker;
    case MessageKind::Checkin: return LifecycleInput::Checkin;
    case MessageKind::DeregWorker: return LifecycleInput::DeregWorker;
    case MessageKind::Deregister: return LifecycleInput::Deregister;
  }
  return LifecycleInput::Deregister;
}

inline LifecycleInput to_input(HypervisorAction a) {
  return a == HypervisorAction::Wake ? LifecycleInput::Wake : LifecycleInput::Sleep;
}

struct ProtocolMessage {
  SimTime time;
  CvmId cvm = 0;
  std::optional<VcpuIndex> vcpu;  // empty for DEREGISTER
  MessageKind kind = MessageKind::RegMain;
};

class ProtocolViolation : public std::runtime_error {
 public:
  ProtocolViolation(CvmId cvm, std::optional<VcpuIndex> vcpu, VcpuLifecycleState state, LifecycleInput input,
                    const std::string& why)
      : std::runtime_error("protocol violation on cvm " + std::to_string(cvm) +
                           (vcpu ? " vcpu " + std::to_string(*vcpu) : std::string()) + ": " + to_string(input) +
                           " in state " + to_string(state) + " (" + why + ")"),
        state_(state),
        input_(input) {}

  VcpuLifecycleState state() const { return state_; }
  LifecycleInput input() const { return input_; }

 private:
  VcpuLifecycleState state_;
  LifecycleInput input_;
};

struct LifecycleTransition {
  VcpuLifecycleState from;
  LifecycleInput input;
  VcpuLifecycleState to;

  auto operator<=>(const LifecycleTransition&) const = default;
};

// The complete legal transition relation, per vCPU entry. Sleep on an active
// worker is legal but leaves the state unchanged: it only arms pending_sleep,
// which the next CHECKIN consumes. There is deliberately no row taking
// WorkerActive to WorkerDormant.
inline const std::vector<LifecycleTransition>& transition_table() {
  using S = VcpuLifecycleState;
  using I = LifecycleInput;
  static const std::vector<LifecycleTransition> table = {
      {S::Unregistered, I::RegMain, S::RegisteredMain},
      {S::Unregistered, I::RegWorker, S::WorkerActive},
      {S::RegisteredMain, I::Deregister, S::Deregistered},
      {S::WorkerActive, I::Checkin, S::WorkerIdleCheckedIn},
      {S::WorkerActive, I::DeregWorker, S::Deregistered},
      {S::WorkerActive, I::Sleep, S::WorkerActive},
      {S::WorkerIdleCheckedIn, I::Sleep, S::WorkerDormant},
      {S::WorkerIdleCheckedIn, I::DeregWorker, S::Deregistered},
      {S::WorkerIdleCheckedIn, I::Resume, S::WorkerActive},
      {S::WorkerDormant, I::Wake, S::WorkerActive},
      {S::WorkerDormant, I::DeregWorker, S::Deregistered},
      {S::Deregistered, I::Deregister, S::Deregistered},
  };
  return table;
}

struct VcpuEntry {
  VcpuKind kind = VcpuKind::Regular;
  VcpuLifecycleState state = VcpuLifecycleState::Unregistered;
  bool pending_sleep = false;
};

struct RegistryDelta {
  std::optional<VcpuIndex> vcpu;
  VcpuLifecycleState from = VcpuLifecycleState::Unregistered;
  VcpuLifecycleState to = VcpuLifecycleState::Unregistered;
  bool pending_sleep = false;
  bool vm_removed = false;
};

// Hypervisor-side view of one CVM's vCPUs. Entries are created by the
// registration messages; DEREGISTER removes the whole VM and is only legal
// once every worker entry is already Deregistered.
class VcpuRegistry {
 public:
  explicit VcpuRegistry(CvmId cvm) : cvm_(cvm) {}

  CvmId cvm() const { return cvm_; }
  bool vm_removed() const { return vm_removed_; }

  VcpuLifecycleState state(VcpuIndex v) const {
    auto it = entries_.find(v);
    return it == entries_.end() ? VcpuLifecycleState::Unregistered : it->second.state;
  }

  bool pending_sleep(VcpuIndex v) const {
    auto it = entries_.find(v);
    return it != entries_.end() && it->second.pending_sleep;
  }

  const std::map<VcpuIndex, VcpuEntry>& entries() const { return entries_; }

  RegistryDelta handle_message(const ProtocolMessage& m) {
    if (m.cvm != cvm_)
      throw ProtocolViolation(m.cvm, m.vcpu, VcpuLifecycleState::Unregistered, to_input(m.kind), "routed to wrong CVM");
    if (vm_removed_) {
      const VcpuLifecycleState s = m.vcpu ? state(*m.vcpu) : VcpuLifecycleState::Deregistered;
      throw ProtocolViolation(cvm_, m.vcpu, s, to_input(m.kind), "VM already deregistered");
    }
    switch (m.kind) {
      case MessageKind::RegMain:
        return register_entry(require_vcpu(m), VcpuKind::Regular, LifecycleInput::RegMain,
                              VcpuLifecycleState::RegisteredMain);
      case MessageKind::RegWorker:
        return register_entry(require_vcpu(m), VcpuKind::Worker, LifecycleInput::RegWorker,
                              VcpuLifecycleState::WorkerActive);
      case MessageKind::Checkin: {
        const VcpuIndex v = require_vcpu(m);
        VcpuEntry& e = worker_entry(v, LifecycleInput::Checkin);
        if (e.state != VcpuLifecycleState::WorkerActive)
          throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::Checkin,
                                  e.state == VcpuLifecycleState::WorkerIdleCheckedIn ? "duplicate CHECKIN"
                                                                                     : "worker is not active");
        return move_entry(v, e, VcpuLifecycleState::WorkerIdleCheckedIn);
      }
      case MessageKind::DeregWorker: {
        const VcpuIndex v = require_vcpu(m);
        VcpuEntry& e = worker_entry(v, LifecycleInput::DeregWorker);
        if (e.state != VcpuLifecycleState::WorkerActive && e.state != VcpuLifecycleState::WorkerIdleCheckedIn &&
            e.state != VcpuLifecycleState::WorkerDormant)
          throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::DeregWorker, "worker not registered");
        e.pending_sleep = false;
        return move_entry(v, e, VcpuLifecycleState::Deregistered);
      }
      case MessageKind::Deregister: {
        if (m.vcpu)
          throw ProtocolViolation(cvm_, m.vcpu, state(*m.vcpu), LifecycleInput::Deregister,
                                  "DEREGISTER carries no vCPU id");
        if (entries_.empty())
          throw ProtocolViolation(cvm_, std::nullopt, VcpuLifecycleState::Unregistered, LifecycleInput::Deregister,
                                  "CVM has no registered vCPUs");
        for (const auto& [v, e] : entries_)
          if (e.kind == VcpuKind::Worker && e.state != VcpuLifecycleState::Deregistered)
            throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::Deregister, "worker still live");
        for (auto& [v, e] : entries_) e.state = VcpuLifecycleState::Deregistered;
        vm_removed_ = true;
        RegistryDelta d;
        d.vm_removed = true;
        d.to = VcpuLifecycleState::Deregistered;
        return d;
      }
    }
    throw std::logic_error("unreachable message kind");
  }

  RegistryDelta apply_action(VcpuIndex v, HypervisorAction a) {
    VcpuEntry& e = worker_entry(v, to_input(a));
    if (a == HypervisorAction::Wake) {
      if (e.state != VcpuLifecycleState::WorkerDormant)
        throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::Wake, "Wake targets dormant workers only");
      return move_entry(v, e, VcpuLifecycleState::WorkerActive);
    }
    // Sleep: direct on a checked-in worker; on an active worker it only arms
    // pending_sleep so the worker is never stopped mid-execution.
    if (e.state == VcpuLifecycleState::WorkerIdleCheckedIn) {
      e.pending_sleep = false;
      return move_entry(v, e, VcpuLifecycleState::WorkerDormant);
    }
    if (e.state == VcpuLifecycleState::WorkerActive) {
      e.pending_sleep = true;
      RegistryDelta d{v, e.state, e.state, true, false};
      return d;
    }
    throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::Sleep, "Sleep targets active or checked-in workers");
  }

  // Guest-side pickup of queued work by a checked-in worker. Illegal while a
  // sleep request is pending: the worker must honor it at this checkpoint.
  RegistryDelta resume(VcpuIndex v) {
    VcpuEntry& e = worker_entry(v, LifecycleInput::Resume);
    if (e.state != VcpuLifecycleState::WorkerIdleCheckedIn)
      throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::Resume, "only checked-in workers resume");
    if (e.pending_sleep)
      throw ProtocolViolation(cvm_, v, e.state, LifecycleInput::Resume, "sleep request pending");
    return move_entry(v, e, VcpuLifecycleState::WorkerActive);
  }

  RegistryDelta apply(VcpuIndex v, LifecycleInput input, SimTime at = SimTime::zero()) {
    switch (input) {
      case LifecycleInput::RegMain:
      case LifecycleInput::RegWorker:
      case LifecycleInput::Checkin:
      case LifecycleInput::DeregWorker:
        return handle_message(ProtocolMessage{at, cvm_, v, message_kind(input)});
      case LifecycleInput::Deregister:
        return handle_message(ProtocolMessage{at, cvm_, std::nullopt, MessageKind::Deregister});
      case LifecycleInput::Wake:
        return apply_action(v, HypervisorAction::Wake);
      case LifecycleInput::Sleep:
        return apply_action(v, HypervisorAction::Sleep);
      case LifecycleInput::Resume:
        return resume(v);
    }
    throw std::logic_error("unreachable lifecycle input");
  }

  bool all_workers_deregistered() const {
    for (const auto& [v, e] : entries_)
      if (e.kind == VcpuKind::Worker && e.state != VcpuLifecycleState::Deregistered) return false;
    return true;
  }

  bool all_workers_dormant() const {
    for (const auto& [v, e] : entries_)
      if (e.kind == VcpuKind::Worker && e.state != VcpuLifecycleState::WorkerDormant &&
          e.state != VcpuLifecycleState::Deregistered)
        return false;
    return true;
  }

 private:
  static MessageKind message_kind(LifecycleInput i) {
    switch (i) {
      case LifecycleInput::RegMain: return MessageKind::RegMain;
      case LifecycleInput::RegWorker: return MessageKind::RegWorker;
      case LifecycleInput::Checkin: return MessageKind::Checkin;
      case LifecycleInput::DeregWorker: return MessageKind::DeregWorker;
      default: return MessageKind::Deregister;
    }
  }

  VcpuIndex require_vcpu(const ProtocolMessage& m) const {
    if (!m.vcpu)
      throw ProtocolViolation(cvm_, std::nullopt, VcpuLifecycleState::Unregistered, to_input(m.kind),
                              "message requires a vCPU id");
    return *m.vcpu;
  }

  RegistryDelta register_entry(VcpuIndex v, VcpuKind kind, LifecycleInput input, VcpuLifecycleState to) {
    auto it = entries_.find(v);
    if (it != entries_.end())
      throw ProtocolViolation(cvm_, v, it->second.state, input, "vCPU already registered");
    entries_[v] = VcpuEntry{kind, to, false};
    return RegistryDelta{v, VcpuLifecycleState::Unregistered, to, false, false};
  }

  VcpuEntry& worker_entry(VcpuIndex v, LifecycleInput input) {
    auto it = entries_.find(v);
    if (it == entries_.end())
      throw ProtocolViolation(cvm_, v, VcpuLifecycleState::Unregistered, input, "vCPU not registered");
    if (it->second.kind != VcpuKind::Worker)
      throw ProtocolViolation(cvm_, v, it->second.state, input, "not a worker vCPU");
    return it->second;
  }

  RegistryDelta move_entry(VcpuIndex v, VcpuEntry& e, VcpuLifecycleState to) {
    const VcpuLifecycleState from = e.state;
    e.state = to;
    return RegistryDelta{v, from, to, e.pending_sleep, false};
  }

  CvmId cvm_;
  std::map<VcpuIndex, VcpuEntry> entries_;
  bool vm_removed_ = false;
};

}  // namespace ecvm
