#pragma once

#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecvm/guest.hpp"
#include "ecvm/hypervisor.hpp"
#include "ecvm/time.hpp"
#include "ecvm/workload.hpp"

namespace ecvm {

class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct ScenarioFlags {
  bool preemptive_regular = false;
  bool dispatch_on_checkin = false;  // central per-CVM run queue instead of upfront placement
  double duration_jitter = 0.0;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  std::optional<SimTime> horizon;
  std::vector<CvmConfig> cvms;
  FleetConfig fleet;
  SchedulerPolicy policy;
  SamplerConfig sampler;
  TransitionLatencies latencies;
  WorkloadSpec workload = BatchSpec{};
  ScenarioFlags flags;
};

namespace detail {

using json = nlohmann::ordered_json;

inline void expect_object(const json& v, const std::string& ctx) {
  if (!v.is_object()) throw ParseError(ctx + " must be an object");
}

inline void expect_keys(const json& obj, const std::string& ctx, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) throw ParseError("unknown key '" + key + "' in " + ctx);
  }
}

inline SimTime read_duration(const json& v, const std::string& field) {
  if (v.is_number_integer()) {
    const std::int64_t n = v.get<std::int64_t>();
    if (n < 0) throw ValidationError(field + " must be non-negative");
    return SimTime::us(n);
  }
  if (v.is_string()) {
    try {
      return parse_duration(v.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ParseError(field + ": " + e.what());
    }
  }
  throw ParseError(field + " must be an integer microsecond count or a duration string");
}

inline double read_fraction(const json& v, const std::string& field, double lo, double hi) {
  if (!v.is_number()) throw ParseError(field + " must be a number");
  const double d = v.get<double>();
  if (d < lo || d > hi)
    throw ValidationError(field + " must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return d;
}

template <typename T>
T read_uint(const json& v, const std::string& field) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ParseError(field + " must be a non-negative integer");
  return static_cast<T>(v.get<std::uint64_t>());
}

inline std::string read_string(const json& v, const std::string& field) {
  if (!v.is_string()) throw ParseError(field + " must be a string");
  return v.get<std::string>();
}

inline bool read_bool(const json& v, const std::string& field) {
  if (!v.is_boolean()) throw ParseError(field + " must be a boolean");
  return v.get<bool>();
}

inline CvmConfig parse_cvm(const json& v, const std::string& ctx, CvmId id) {
  expect_object(v, ctx);
  expect_keys(v, ctx, {"regular_vcpus", "worker_vcpus", "boot_latency", "owner"});
  CvmConfig cfg;
  cfg.id = id;
  if (v.contains("regular_vcpus")) cfg.regular_vcpus = read_uint<std::uint32_t>(v["regular_vcpus"], ctx + ".regular_vcpus");
  if (v.contains("worker_vcpus")) cfg.worker_vcpus = read_uint<std::uint32_t>(v["worker_vcpus"], ctx + ".worker_vcpus");
  if (v.contains("boot_latency")) cfg.boot_latency = read_duration(v["boot_latency"], ctx + ".boot_latency");
  if (v.contains("owner")) cfg.owner = read_string(v["owner"], ctx + ".owner");
  if (cfg.regular_vcpus < 1) throw ValidationError(ctx + ": at least one regular vCPU required");
  if (cfg.regular_vcpus + cfg.worker_vcpus > 64) throw ValidationError(ctx + ": at most 64 vCPUs per CVM");
  return cfg;
}

inline DurationDist parse_duration_dist(const json& v, const std::string& ctx) {
  expect_object(v, ctx);
  DurationDist d;
  const std::string kind = v.contains("kind") ? read_string(v["kind"], ctx + ".kind") : "fixed";
  if (kind == "fixed") {
    expect_keys(v, ctx, {"kind", "value"});
    if (!v.contains("value")) throw ParseError(ctx + " needs a value");
    d.kind = DurationDist::Kind::Fixed;
    d.fixed = read_duration(v["value"], ctx + ".value");
  } else if (kind == "uniform") {
    expect_keys(v, ctx, {"kind", "lo", "hi"});
    if (!v.contains("lo") || !v.contains("hi")) throw ParseError(ctx + " needs lo and hi");
    d.kind = DurationDist::Kind::Uniform;
    d.lo = read_duration(v["lo"], ctx + ".lo");
    d.hi = read_duration(v["hi"], ctx + ".hi");
  } else if (kind == "exponential") {
    expect_keys(v, ctx, {"kind", "mean"});
    if (!v.contains("mean")) throw ParseError(ctx + " needs a mean");
    d.kind = DurationDist::Kind::Exponential;
    d.mean = read_duration(v["mean"], ctx + ".mean");
  } else {
    throw ParseError(ctx + ": unknown duration distribution '" + kind + "'");
  }
  return d;
}

inline WorkloadSpec parse_workload(const json& v) {
  expect_object(v, "workload");
  if (!v.contains("kind")) throw ParseError("workload needs a kind");
  const std::string kind = read_string(v["kind"], "workload.kind");
  if (kind == "batch") {
    expect_keys(v, "workload", {"kind", "count", "duration", "start"});
    BatchSpec b;
    if (v.contains("count")) b.count = read_uint<std::uint32_t>(v["count"], "workload.count");
    if (v.contains("duration")) b.duration = read_duration(v["duration"], "workload.duration");
    if (v.contains("start")) b.start = read_duration(v["start"], "workload.start");
    return b;
  }
  if (kind == "burst") {
    expect_keys(v, "workload", {"kind", "count", "duration", "start", "user", "function"});
    BurstSpec b;
    if (v.contains("count")) b.count = read_uint<std::uint32_t>(v["count"], "workload.count");
    if (v.contains("duration")) b.duration = read_duration(v["duration"], "workload.duration");
    if (v.contains("start")) b.start = read_duration(v["start"], "workload.start");
    if (v.contains("user")) b.user = read_string(v["user"], "workload.user");
    if (v.contains("function")) b.function = read_string(v["function"], "workload.function");
    return b;
  }
  if (kind == "poisson") {
    expect_keys(v, "workload", {"kind", "rate", "duration_dist", "horizon", "user", "function"});
    PoissonSpec p;
    if (!v.contains("rate") || !v.contains("duration_dist") || !v.contains("horizon"))
      throw ParseError("poisson workload needs rate, duration_dist, horizon");
    if (!v["rate"].is_number()) throw ParseError("workload.rate must be a number");
    p.rate_per_s = v["rate"].get<double>();
    p.duration = parse_duration_dist(v["duration_dist"], "workload.duration_dist");
    p.horizon = read_duration(v["horizon"], "workload.horizon");
    if (v.contains("user")) p.user = read_string(v["user"], "workload.user");
    if (v.contains("function")) p.function = read_string(v["function"], "workload.function");
    return p;
  }
  throw ParseError("unknown workload kind '" + kind + "'");
}

}  // namespace detail

inline void validate(const Scenario& s) {
  if (s.name.empty()) throw ValidationError("scenario name must be non-empty");
  if (s.horizon && *s.horizon == SimTime::zero()) throw ValidationError("horizon must be positive");
  if (s.sampler.interval <= SimTime::zero()) throw ValidationError("scheduler.interval must be positive");
  if (!(s.policy.wake_threshold > 0.0 && s.policy.wake_threshold <= 1.0))
    throw ValidationError("wake_threshold must be in (0, 1]");
  if (!(s.policy.sleep_threshold >= 0.0 && s.policy.sleep_threshold < 1.0))
    throw ValidationError("sleep_threshold must be in [0, 1)");
  if (!(s.policy.sleep_threshold < s.policy.wake_threshold))
    throw ValidationError("sleep_threshold must be below wake_threshold");
  if (s.policy.max_actions_per_tick < 1) throw ValidationError("max_actions_per_tick must be >= 1");
  if (s.policy.scale_out_after_ticks < 1) throw ValidationError("scale_out_after_ticks must be >= 1");
  if (s.fleet.max_cvms < 1) throw ValidationError("fleet.max_cvms must be >= 1");
  if (s.fleet.cvm_template.regular_vcpus < 1)
    throw ValidationError("fleet.cvm_template: at least one regular vCPU required");
  if (s.fleet.cvm_template.regular_vcpus + s.fleet.cvm_template.worker_vcpus > 64)
    throw ValidationError("fleet.cvm_template: at most 64 vCPUs per CVM");
  if (s.flags.duration_jitter < 0.0 || s.flags.duration_jitter >= 1.0)
    throw ValidationError("flags.duration_jitter must be in [0, 1)");
  validate(s.workload);  // WorkloadError derives from invalid_argument
}

inline Scenario parse_scenario_json(const detail::json& root) {
  using detail::expect_keys;
  using detail::expect_object;
  expect_object(root, "scenario");
  expect_keys(root, "scenario",
              {"name", "seed", "horizon", "cvms", "fleet", "scheduler", "latencies", "workload", "flags"});
  Scenario s;
  if (root.contains("name")) s.name = detail::read_string(root["name"], "name");
  if (root.contains("seed")) s.seed = detail::read_uint<std::uint64_t>(root["seed"], "seed");
  if (root.contains("horizon")) s.horizon = detail::read_duration(root["horizon"], "horizon");

  if (root.contains("cvms")) {
    if (!root["cvms"].is_array()) throw ParseError("cvms must be an array");
    CvmId id = 0;
    for (const auto& v : root["cvms"]) s.cvms.push_back(detail::parse_cvm(v, "cvms[" + std::to_string(id) + "]", id)), ++id;
  }

  if (root.contains("fleet")) {
    const auto& f = root["fleet"];
    expect_object(f, "fleet");
    expect_keys(f, "fleet",
                {"strategy", "max_cvms", "cvm_template", "cold_boot_latency", "warm_pool_size",
                 "backup_idle_utilization"});
    if (f.contains("strategy")) {
      const std::string name = detail::read_string(f["strategy"], "fleet.strategy");
      const std::optional<Strategy> st = parse_strategy(name);
      if (!st) throw ParseError("unknown strategy '" + name + "'");
      s.fleet.strategy = *st;
    }
    if (f.contains("max_cvms")) s.fleet.max_cvms = detail::read_uint<std::uint32_t>(f["max_cvms"], "fleet.max_cvms");
    if (f.contains("cvm_template")) {
      const CvmConfig t = detail::parse_cvm(f["cvm_template"], "fleet.cvm_template", 0);
      s.fleet.cvm_template = CvmTemplate{t.regular_vcpus, t.worker_vcpus, t.boot_latency};
    }
    if (f.contains("cold_boot_latency"))
      s.fleet.cold_boot_latency = detail::read_duration(f["cold_boot_latency"], "fleet.cold_boot_latency");
    if (f.contains("warm_pool_size"))
      s.fleet.warm_pool_size = detail::read_uint<std::uint32_t>(f["warm_pool_size"], "fleet.warm_pool_size");
    if (f.contains("backup_idle_utilization"))
      s.fleet.backup_idle_utilization =
          detail::read_fraction(f["backup_idle_utilization"], "fleet.backup_idle_utilization", 0.0, 1.0);
  }

  if (root.contains("scheduler")) {
    const auto& p = root["scheduler"];
    expect_object(p, "scheduler");
    expect_keys(p, "scheduler",
                {"interval", "per_vm_cost", "wake_threshold", "sleep_threshold", "max_actions_per_tick",
                 "scale_out_after_ticks"});
    if (p.contains("interval")) s.sampler.interval = detail::read_duration(p["interval"], "scheduler.interval");
    if (p.contains("per_vm_cost"))
      s.sampler.per_vm_cost = detail::read_duration(p["per_vm_cost"], "scheduler.per_vm_cost");
    if (p.contains("wake_threshold"))
      s.policy.wake_threshold = detail::read_fraction(p["wake_threshold"], "scheduler.wake_threshold", 0.0, 1.0);
    if (p.contains("sleep_threshold"))
      s.policy.sleep_threshold = detail::read_fraction(p["sleep_threshold"], "scheduler.sleep_threshold", 0.0, 1.0);
    if (p.contains("max_actions_per_tick"))
      s.policy.max_actions_per_tick = detail::read_uint<std::uint32_t>(p["max_actions_per_tick"], "scheduler.max_actions_per_tick");
    if (p.contains("scale_out_after_ticks"))
      s.policy.scale_out_after_ticks = detail::read_uint<std::uint32_t>(p["scale_out_after_ticks"], "scheduler.scale_out_after_ticks");
  }

  if (root.contains("latencies")) {
    const auto& l = root["latencies"];
    expect_object(l, "latencies");
    expect_keys(l, "latencies", {"wake", "sleep", "hotplug_add", "hotplug_remove", "message_delivery"});
    if (l.contains("wake")) s.latencies.wake = detail::read_duration(l["wake"], "latencies.wake");
    if (l.contains("sleep")) s.latencies.sleep = detail::read_duration(l["sleep"], "latencies.sleep");
    if (l.contains("hotplug_add"))
      s.latencies.hotplug_add = detail::read_duration(l["hotplug_add"], "latencies.hotplug_add");
    if (l.contains("hotplug_remove"))
      s.latencies.hotplug_remove = detail::read_duration(l["hotplug_remove"], "latencies.hotplug_remove");
    if (l.contains("message_delivery"))
      s.latencies.message_delivery = detail::read_duration(l["message_delivery"], "latencies.message_delivery");
  }

  if (root.contains("workload")) s.workload = detail::parse_workload(root["workload"]);

  if (root.contains("flags")) {
    const auto& f = root["flags"];
    expect_object(f, "flags");
    expect_keys(f, "flags", {"preemptive_regular", "dispatch_on_checkin", "duration_jitter"});
    if (f.contains("preemptive_regular"))
      s.flags.preemptive_regular = detail::read_bool(f["preemptive_regular"], "flags.preemptive_regular");
    if (f.contains("dispatch_on_checkin"))
      s.flags.dispatch_on_checkin = detail::read_bool(f["dispatch_on_checkin"], "flags.dispatch_on_checkin");
    if (f.contains("duration_jitter"))
      s.flags.duration_jitter = detail::read_fraction(f["duration_jitter"], "flags.duration_jitter", 0.0, 1.0);
  }

  validate(s);
  return s;
}

inline Scenario parse_scenario_text(const std::string& text, const std::string& origin = "<string>") {
  detail::json root;
  try {
    root = detail::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
  try {
    return parse_scenario_json(root);
  } catch (const ParseError& e) {
    throw ParseError(origin + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(origin + ": " + e.what());
  } catch (const WorkloadError& e) {
    throw ValidationError(origin + ": " + e.what());
  }
}

inline Scenario parse_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot read scenario file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario_text(buf.str(), path);
}

inline detail::json scenario_json(const Scenario& s) {
  using detail::json;
  json root;
  root["name"] = s.name;
  root["seed"] = s.seed;
  if (s.horizon) root["horizon"] = s.horizon->count();
  json cvms = json::array();
  for (const CvmConfig& c : s.cvms)
    cvms.push_back({{"regular_vcpus", c.regular_vcpus},
                    {"worker_vcpus", c.worker_vcpus},
                    {"boot_latency", c.boot_latency.count()},
                    {"owner", c.owner}});
  root["cvms"] = cvms;
  root["fleet"] = {{"strategy", strategy_name(s.fleet.strategy)},
                   {"max_cvms", s.fleet.max_cvms},
                   {"cvm_template",
                    {{"regular_vcpus", s.fleet.cvm_template.regular_vcpus},
                     {"worker_vcpus", s.fleet.cvm_template.worker_vcpus},
                     {"boot_latency", s.fleet.cvm_template.boot_latency.count()}}},
                   {"cold_boot_latency", s.fleet.cold_boot_latency.count()},
                   {"warm_pool_size", s.fleet.warm_pool_size},
                   {"backup_idle_utilization", s.fleet.backup_idle_utilization}};
  root["scheduler"] = {{"interval", s.sampler.interval.count()},
                       {"per_vm_cost", s.sampler.per_vm_cost.count()},
                       {"wake_threshold", s.policy.wake_threshold},
                       {"sleep_threshold", s.policy.sleep_threshold},
                       {"max_actions_per_tick", s.policy.max_actions_per_tick},
                       {"scale_out_after_ticks", s.policy.scale_out_after_ticks}};
  root["latencies"] = {{"wake", s.latencies.wake.count()},
                       {"sleep", s.latencies.sleep.count()},
                       {"hotplug_add", s.latencies.hotplug_add.count()},
                       {"hotplug_remove", s.latencies.hotplug_remove.count()},
                       {"message_delivery", s.latencies.message_delivery.count()}};
  if (const auto* b = std::get_if<BatchSpec>(&s.workload)) {
    root["workload"] = {{"kind", "batch"}, {"count", b->count}, {"duration", b->duration.count()},
                        {"start", b->start.count()}};
  } else if (const auto* b = std::get_if<BurstSpec>(&s.workload)) {
    root["workload"] = {{"kind", "burst"},       {"count", b->count}, {"duration", b->duration.count()},
                        {"start", b->start.count()}, {"user", b->user},   {"function", b->function}};
  } else if (const auto* p = std::get_if<PoissonSpec>(&s.workload)) {
    json dist;
    switch (p->duration.kind) {
      case DurationDist::Kind::Fixed: dist = {{"kind", "fixed"}, {"value", p->duration.fixed.count()}}; break;
      case DurationDist::Kind::Uniform:
        dist = {{"kind", "uniform"}, {"lo", p->duration.lo.count()}, {"hi", p->duration.hi.count()}};
        break;
      case DurationDist::Kind::Exponential:
        dist = {{"kind", "exponential"}, {"mean", p->duration.mean.count()}};
        break;
    }
    root["workload"] = {{"kind", "poisson"},       {"rate", p->rate_per_s}, {"duration_dist", dist},
                        {"horizon", p->horizon.count()}, {"user", p->user},       {"function", p->function}};
  }
  root["flags"] = {{"preemptive_regular", s.flags.preemptive_regular},
                   {"dispatch_on_checkin", s.flags.dispatch_on_checkin},
                   {"duration_jitter", s.flags.duration_jitter}};
  return root;
}

inline std::string serialize_scenario(const Scenario& s) { return scenario_json(s).dump(2) + "\n"; }

// Overwrite one scalar field addressed by a dotted path (e.g.
// "scheduler.interval" = "0.5s") and re-validate through the strict parser.
inline Scenario with_param(const Scenario& s, const std::string& dotted_path, const std::string& value) {
  detail::json root = scenario_json(s);
  detail::json* node = &root;
  std::size_t begin = 0;
  std::vector<std::string> parts;
  while (true) {
    const std::size_t dot = dotted_path.find('.', begin);
    parts.push_back(dotted_path.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin));
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i]))
      throw ValidationError("param path '" + dotted_path + "' does not resolve");
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->is_object() || !node->contains(leaf) || (*node)[leaf].is_structured())
    throw ValidationError("param path '" + dotted_path + "' does not resolve to a scalar field");

  detail::json& slot = (*node)[leaf];
  if (value == "true" || value == "false") {
    slot = (value == "true");
  } else {
    try {
      slot = parse_duration(value).count();
    } catch (const std::invalid_argument&) {
      try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        slot = d;
      } catch (const std::exception&) {
        slot = value;
      }
    }
  }
  return parse_scenario_json(root);
}

}  // namespace ecvm
