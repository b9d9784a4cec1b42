#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "json.hpp"

#include "testutil.hpp"

// End-to-end checks of the installed binary, driven through a shell.

namespace ecvm {
namespace {

using test::fresh_dir;
using test::scenario_dir;
using test::slurp;

std::string cli() { return ECVM_CLI_PATH; }
std::string fixture(const std::string& name) { return (scenario_dir() / (name + ".json")).string(); }

int run_cli(const std::string& args) {
  const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

bool file_exists(const std::string& path) { return std::ifstream(path).good(); }

TEST(CliRunTest, WritesTheFiveArtifacts) {
  const std::string out = fresh_dir("cli_run");
  ASSERT_EQ(run_cli("run " + fixture("synthetic") + " --out " + out), 0);

  for (const char* name : {"timeline.csv", "tasks.csv", "messages.csv", "timeline.txt", "report.json"})
    EXPECT_TRUE(file_exists(out + "/" + std::string(name))) << name;

  EXPECT_EQ(slurp(out + "/timeline.csv").substr(0, 42), "vcpu_id,kind,state,from_us,to_us,task_id\nc");
  EXPECT_EQ(slurp(out + "/timeline.txt").substr(0, 17), "bucket_us=500000\n");

  const auto report = nlohmann::json::parse(slurp(out + "/report.json"));
  EXPECT_EQ(report["scenario"], "synthetic");
  EXPECT_EQ(report["strategy"], "worker_vcpu");
  EXPECT_EQ(report["makespan_us"], 26'000'007);
  EXPECT_NEAR(report["cpu_efficiency"].get<double>(), 0.869565, 1e-6);
  EXPECT_EQ(report["tasks"]["completed"], 4);
  EXPECT_TRUE(report["shutdown_completed"].get<bool>());
}

TEST(CliRunTest, SeedFlagOverridesTheScenarioSeed) {
  const std::string out = fresh_dir("cli_seed");
  ASSERT_EQ(run_cli("run " + fixture("synthetic") + " --seed 99 --out " + out), 0);
  const auto report = nlohmann::json::parse(slurp(out + "/report.json"));
  EXPECT_EQ(report["seed"], 99);
  // the synthetic batch draws nothing from the RNG, so results are unchanged
  EXPECT_EQ(report["makespan_us"], 26'000'007);
}

TEST(CliCompareTest, EmitsCanonicalOrderRowsWithFrozenNumbers) {
  const std::string out = fresh_dir("cli_compare");
  // flags list the strategies scrambled; rows still come out in canonical order
  ASSERT_EQ(run_cli("compare " + fixture("burst_serverless") +
                    " --strategies fixed_warm_keep,worker_vcpu,fixed_cold_start --out " + out),
            0);
  EXPECT_EQ(slurp(out + "/compare.csv"),
            "strategy,makespan_us,cpu_efficiency,total_transitions,total_boot_us\n"
            "worker_vcpu,40300007,0.996264,9,0\n"
            "fixed_cold_start,100000000,0.415584,0,225000000\n"
            "fixed_warm_keep,55000000,0.727273,0,45000000\n");
  for (const char* name : {"worker_vcpu", "fixed_cold_start", "fixed_warm_keep"})
    EXPECT_TRUE(file_exists(out + "/report_" + std::string(name) + ".json")) << name;
}

TEST(CliCompareTest, DefaultsToEveryStrategy) {
  const std::string out = fresh_dir("cli_compare_all");
  ASSERT_EQ(run_cli("compare " + fixture("synthetic") + " --out " + out), 0);
  const std::string csv = slurp(out + "/compare.csv");
  for (const char* name : {"backup_vcpu", "fixed_cold_start", "fixed_warm_keep", "hotplug", "worker_vcpu"})
    EXPECT_NE(csv.find(name), std::string::npos) << name;
}

TEST(CliSweepTest, SortsRowsByParsedValue) {
  const std::string out = fresh_dir("cli_sweep");
  ASSERT_EQ(run_cli("sweep " + fixture("synthetic") +
                    " --param scheduler.interval --values 2s,0.5s,1s --out " + out),
            0);
  EXPECT_EQ(slurp(out + "/sweep.csv"),
            "value,makespan_us,cpu_efficiency\n"
            "0.5s,21500007,0.963855\n"
            "1s,23000007,0.930232\n"
            "2s,26000007,0.869565\n");
}

TEST(CliExitCodeTest, DistinguishesUsageInputAndRuntimeFailures) {
  const std::string out = fresh_dir("cli_exit");
  EXPECT_EQ(run_cli("run " + (scenario_dir() / "missing.json").string() + " --out " + out), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("run " + fixture("synthetic")), 2);  // --out is required
  EXPECT_EQ(run_cli("sweep " + fixture("synthetic") + " --param scheduler.quantum --values 1s --out " + out), 2);

  const std::string bad = out + "/bad.json";
  std::ofstream(bad) << "{\"scheduler\": {\"interval\": 0}}";
  EXPECT_EQ(run_cli("run " + bad + " --out " + out), 2);

  // a valid scenario that fails at runtime: output path cannot be created
  EXPECT_EQ(run_cli("run " + fixture("synthetic") + " --out /dev/null/nested"), 3);
}

}  // namespace
}  // namespace ecvm
