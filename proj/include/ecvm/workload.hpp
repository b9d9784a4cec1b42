#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ecvm/time.hpp"

namespace ecvm {

using TaskId = std::uint64_t;

struct Task {
  TaskId id = 0;
  std::string user = "u0";
  std::string function = "f0";
  SimTime arrival;
  SimTime duration;
};

// Batch and Burst share semantics: `count` tasks of equal duration arriving
// simultaneously at `start`. Burst additionally pins user/function.
struct BatchSpec {
  std::uint32_t count = 0;
  SimTime duration;
  SimTime start;
};

struct BurstSpec {
  std::uint32_t count = 0;
  SimTime duration;
  SimTime start;
  std::string user = "u0";
  std::string function = "f0";
};

struct DurationDist {
  enum class Kind { Fixed, Uniform, Exponential } kind = Kind::Fixed;
  SimTime fixed;
  SimTime lo, hi;   // uniform, inclusive bounds
  SimTime mean;     // exponential
};

struct PoissonSpec {
  double rate_per_s = 1.0;  // arrival rate
  DurationDist duration;
  SimTime horizon;
  std::string user = "u0";
  std::string function = "f0";
};

using WorkloadSpec = std::variant<BatchSpec, BurstSpec, PoissonSpec>;

class WorkloadError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void validate(const WorkloadSpec& spec) {
  if (const auto* b = std::get_if<BatchSpec>(&spec)) {
    if (b->count > 0 && b->duration == SimTime::zero()) throw WorkloadError("batch duration must be positive");
  } else if (const auto* b = std::get_if<BurstSpec>(&spec)) {
    if (b->count > 0 && b->duration == SimTime::zero()) throw WorkloadError("burst duration must be positive");
    if (b->user.empty() || b->function.empty()) throw WorkloadError("burst user/function must be non-empty");
  } else if (const auto* p = std::get_if<PoissonSpec>(&spec)) {
    if (!(p->rate_per_s > 0.0)) throw WorkloadError("poisson rate must be positive");
    if (p->horizon == SimTime::zero()) throw WorkloadError("poisson horizon must be positive");
    switch (p->duration.kind) {
      case DurationDist::Kind::Fixed:
        if (p->duration.fixed == SimTime::zero()) throw WorkloadError("fixed duration must be positive");
        break;
      case DurationDist::Kind::Uniform:
        if (p->duration.lo == SimTime::zero() || p->duration.hi < p->duration.lo)
          throw WorkloadError("uniform duration bounds invalid");
        break;
      case DurationDist::Kind::Exponential:
        if (p->duration.mean == SimTime::zero()) throw WorkloadError("exponential mean must be positive");
        break;
    }
  }
}

namespace detail {

inline SimTime draw_duration(const DurationDist& d, std::mt19937_64& rng) {
  switch (d.kind) {
    case DurationDist::Kind::Fixed:
      return d.fixed;
    case DurationDist::Kind::Uniform: {
      std::uniform_int_distribution<std::int64_t> dist(d.lo.count(), d.hi.count());
      return SimTime::us(dist(rng));
    }
    case DurationDist::Kind::Exponential: {
      std::exponential_distribution<double> dist(1.0 / static_cast<double>(d.mean.count()));
      const double v = dist(rng);
      return SimTime::us(std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(v))));
    }
  }
  return d.fixed;
}

inline SimTime apply_jitter(SimTime duration, double jitter, std::mt19937_64& rng) {
  if (jitter <= 0.0) return duration;
  std::uniform_real_distribution<double> dist(-jitter, jitter);
  const double factor = 1.0 + dist(rng);
  const auto us = static_cast<std::int64_t>(std::llround(static_cast<double>(duration.count()) * factor));
  return SimTime::us(std::max<std::int64_t>(1, us));
}

}  // namespace detail

// Deterministic for a given (spec, rng state, jitter): task ids are assigned
// in arrival order starting at 0.
inline std::vector<Task> generate(const WorkloadSpec& spec, std::mt19937_64& rng, double duration_jitter = 0.0) {
  validate(spec);
  if (duration_jitter < 0.0 || duration_jitter >= 1.0) throw WorkloadError("duration_jitter must be in [0, 1)");
  std::vector<Task> tasks;
  if (const auto* b = std::get_if<BatchSpec>(&spec)) {
    for (std::uint32_t i = 0; i < b->count; ++i)
      tasks.push_back(Task{i, "u0", "f0", b->start, detail::apply_jitter(b->duration, duration_jitter, rng)});
  } else if (const auto* b = std::get_if<BurstSpec>(&spec)) {
    for (std::uint32_t i = 0; i < b->count; ++i)
      tasks.push_back(Task{i, b->user, b->function, b->start, detail::apply_jitter(b->duration, duration_jitter, rng)});
  } else if (const auto* p = std::get_if<PoissonSpec>(&spec)) {
    std::exponential_distribution<double> gap_s(p->rate_per_s);
    SimTime at;
    TaskId id = 0;
    for (;;) {
      const double gap = gap_s(rng);
      const auto gap_us = static_cast<std::int64_t>(std::llround(gap * 1e6));
      at += SimTime::us(std::max<std::int64_t>(1, gap_us));
      if (at > p->horizon) break;
      const SimTime d = detail::apply_jitter(detail::draw_duration(p->duration, rng), duration_jitter, rng);
      tasks.push_back(Task{id++, p->user, p->function, at, d});
    }
  }
  return tasks;
}

inline SimTime total_work(const std::vector<Task>& tasks) {
  SimTime sum;
  for (const Task& t : tasks) sum += t.duration;
  return sum;
}

}  // namespace ecvm
