#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ecvm/report.hpp"
#include "ecvm/scenario.hpp"
#include "ecvm/simulation.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitSimulation = 3;

void write_run_outputs(const ecvm::RunResult& r, const std::filesystem::path& out) {
  ecvm::export_timeline_csv((out / "timeline.csv").string(), r.segments);
  ecvm::export_tasks_csv((out / "tasks.csv").string(), r.tasks);
  ecvm::export_messages_csv((out / "messages.csv").string(), r.messages);
  ecvm::export_text_timeline((out / "timeline.txt").string(), r.segments, ecvm::SimTime::ms(500));
  ecvm::export_report_json((out / "report.json").string(), r);
}

std::vector<ecvm::Strategy> parse_strategy_list(const std::string& csv) {
  std::vector<ecvm::Strategy> out;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t comma = csv.find(',', begin);
    const std::string name = csv.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
    const std::optional<ecvm::Strategy> s = ecvm::parse_strategy(name);
    if (!s) throw ecvm::ParseError("unknown strategy '" + name + "'");
    out.push_back(*s);
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t comma = csv.find(',', begin);
    out.push_back(csv.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

// Swept values order numerically when they parse as durations or numbers,
// lexicographically otherwise.
bool value_less(const std::string& a, const std::string& b) {
  auto key = [](const std::string& v) -> std::optional<double> {
    try {
      return static_cast<double>(ecvm::parse_duration(v).count());
    } catch (const std::invalid_argument&) {
    }
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    return std::nullopt;
  };
  const std::optional<double> ka = key(a);
  const std::optional<double> kb = key(b);
  if (ka && kb) return *ka < *kb;
  return a < b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic simulator of elastic confidential VMs"};
  app.require_subcommand(1);

  std::string scenario_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  std::string strategies_csv;
  std::string param;
  std::string values_csv;

  CLI::App* run = app.add_subcommand("run", "Run one scenario and export its reports");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--out", out_dir, "Output directory")->required();
  run->add_option("--seed", seed_override, "Override the scenario seed");

  CLI::App* compare = app.add_subcommand("compare", "Run the same scenario under several strategies");
  compare->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  compare->add_option("--strategies", strategies_csv, "Comma-separated strategy names (default: all)");
  compare->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* sweep = app.add_subcommand("sweep", "Run the scenario once per value of one parameter");
  sweep->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  sweep->add_option("--param", param, "Dotted path of the swept field, e.g. scheduler.interval")->required();
  sweep->add_option("--values", values_csv, "Comma-separated values")->required();
  sweep->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const ecvm::Scenario base = [&] {
      ecvm::Scenario s = ecvm::parse_scenario(scenario_path);
      if (seed_override) s.seed = *seed_override;
      return s;
    }();
    const std::filesystem::path out(out_dir);
    std::filesystem::create_directories(out);

    if (run->parsed()) {
      write_run_outputs(ecvm::run_scenario(base), out);
    } else if (compare->parsed()) {
      std::vector<ecvm::Strategy> strategies(std::begin(ecvm::kAllStrategies), std::end(ecvm::kAllStrategies));
      if (!strategies_csv.empty()) strategies = parse_strategy_list(strategies_csv);
      std::vector<ecvm::CompareRow> rows;
      for (const ecvm::RunResult& r : ecvm::compare_strategies(base, strategies)) {
        rows.push_back(ecvm::compare_row(r));
        ecvm::export_report_json((out / ("report_" + std::string(ecvm::strategy_name(r.strategy)) + ".json")).string(), r);
      }
      std::sort(rows.begin(), rows.end(),
                [](const ecvm::CompareRow& a, const ecvm::CompareRow& b) { return a.strategy < b.strategy; });
      ecvm::export_compare_csv((out / "compare.csv").string(), rows);
    } else {
      std::vector<std::string> values = split_values(values_csv);
      std::sort(values.begin(), values.end(), value_less);
      std::vector<ecvm::SweepRow> rows;
      for (const auto& [value, r] : ecvm::sweep_param(base, param, values)) {
        ecvm::SweepRow row;
        row.value = value;
        row.makespan = ecvm::try_makespan(r);
        try {
          row.cpu_efficiency = ecvm::cpu_efficiency(r);
        } catch (const ecvm::DivisionUndefined&) {
        }
        rows.push_back(std::move(row));
      }
      ecvm::export_sweep_csv((out / "sweep.csv").string(), rows);
    }
  } catch (const ecvm::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ecvm::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ecvm::WorkloadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "simulation error: " << e.what() << "\n";
    return kExitSimulation;
  }
  return 0;
}
