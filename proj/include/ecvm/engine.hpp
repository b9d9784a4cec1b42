#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "ecvm/time.hpp"

namespace ecvm {

// Event kinds are descriptive only; dispatch runs the callback captured at
// schedule time. QuantumExpiry is internal plumbing for preemptive regular
// vCPUs and never appears in scenario files.
enum class EventKind {
  TaskArrival,
  SamplingTick,
  TransitionDone,
  TaskDone,
  BootDone,
  MessageDelivery,
  ShutdownRequest,
  QuantumExpiry,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::TaskArrival: return "TaskArrival";
    case EventKind::SamplingTick: return "SamplingTick";
    case EventKind::TransitionDone: return "TransitionDone";
    case EventKind::TaskDone: return "TaskDone";
    case EventKind::BootDone: return "BootDone";
    case EventKind::MessageDelivery: return "MessageDelivery";
    case EventKind::ShutdownRequest: return "ShutdownRequest";
    case EventKind::QuantumExpiry: return "QuantumExpiry";
  }
  return "?";
}

using EventId = std::uint64_t;
using EntityId = std::uint64_t;

class SchedulingInPast : public std::logic_error {
 public:
  SchedulingInPast(SimTime at, SimTime now)
      : std::logic_error("event scheduled at " + format_duration(at) + " before now=" + format_duration(now)) {}
};

struct SimStats {
  std::uint64_t events_scheduled = 0;
  std::uint64_t events_processed = 0;
  std::uint64_t events_cancelled = 0;
  SimTime final_time;
};

// Deterministic discrete-event core. Events dispatch in (at, seq) order where
// seq is the monotonic schedule count, so same-instant events run in the
// order they were scheduled. All randomness in a run flows through rng().
class Engine {
 public:
  explicit Engine(std::uint64_t seed) : seed_(seed), rng_(seed) {}

  SimTime now() const { return now_; }
  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }

  EventId schedule(SimTime at, EventKind kind, EntityId target, std::function<void()> fn) {
    if (at < now_) throw SchedulingInPast(at, now_);
    const EventId id = next_seq_++;
    heap_.push_back(Pending{at, id, kind, target, std::move(fn)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
    pending_.insert(id);
    ++stats_.events_scheduled;
    return id;
  }

  // True iff the event was still pending; dispatch of a cancelled event is a
  // no-op and counts toward events_cancelled.
  bool cancel(EventId id) {
    if (pending_.erase(id) == 0) return false;
    cancelled_.insert(id);
    return true;
  }

  bool pending(EventId id) const { return pending_.count(id) != 0; }
  std::size_t pending_events() const { return pending_.size(); }

  SimStats run(std::optional<SimTime> until = std::nullopt) {
    while (!heap_.empty()) {
      if (until && heap_.front().at > *until) break;
      std::pop_heap(heap_.begin(), heap_.end(), Later{});
      Pending ev = std::move(heap_.back());
      heap_.pop_back();
      if (cancelled_.erase(ev.seq) != 0) {
        ++stats_.events_cancelled;
        continue;
      }
      pending_.erase(ev.seq);
      now_ = ev.at;
      ++stats_.events_processed;
      ev.fn();
    }
    if (until && *until > now_) now_ = *until;
    stats_.final_time = now_;
    return stats_;
  }

  const SimStats& stats() const { return stats_; }

 private:
  struct Pending {
    SimTime at;
    EventId seq;
    EventKind kind;
    EntityId target;
    std::function<void()> fn;
  };
  // std::push_heap builds a max-heap; invert to pop the earliest (at, seq).
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq > b.seq;
    }
  };

  std::uint64_t seed_;
  std::mt19937_64 rng_;
  SimTime now_;
  EventId next_seq_ = 0;
  std::vector<Pending> heap_;
  std::unordered_set<EventId> pending_;
  std::unordered_set<EventId> cancelled_;
  SimStats stats_;
};

}  // namespace ecvm
