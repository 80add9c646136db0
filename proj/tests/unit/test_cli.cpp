#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "cxlmem/topology.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("cxlmem-cli-" + std::to_string(::getpid()) + "-" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) {
    std::string cmd = "CXLMEM_OUTPUT_DIR=" + quote(dir_.string()) + " " + quote(cxlmem::test::kCli) +
                      " " + args + " 2>/dev/null";
    CliResult r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
  }

  std::string toucher(const std::string& args) { return quote(cxlmem::test::kToucher) + " " + args; }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, TopologyPrintsJson) {
  auto r = run("topology");
  ASSERT_EQ(r.code, 0);
  json j = json::parse(r.out);
  EXPECT_GE(j["nodes"].size(), 1u);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("no-such-subcommand").code, 1);
  EXPECT_EQ(run("profile --period").code, 1);
  EXPECT_EQ(run("profile").code, 1);
  EXPECT_EQ(run("profile --mode output --regex --pattern '([' -- /bin/true").code, 1);
  EXPECT_EQ(run("profile -- /nonexistent/cxlmem-nothing").code, 1);
  EXPECT_EQ(run("report").code, 1);
  EXPECT_EQ(run("sweep-capacity --fractions 2 -- /bin/true").code, 1);
}

TEST_F(Cli, HelpExitsZero) { EXPECT_EQ(run("--help").code, 0); }

TEST_F(Cli, ProfileWritesAndRefusesToOverwrite) {
  // A short period so the 0.3 s run yields enough samples to analyze.
  std::string workload = "--period 0.1 -- " + toucher("touch --size 8M --compute-s 0.3");
  auto r = run("profile " + workload);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir_ / "profile.jsonl"));
  EXPECT_EQ(run("profile " + workload).code, 1);
  EXPECT_EQ(run("profile --force " + workload).code, 0);

  auto a = run("analyze " + quote((dir_ / "profile.jsonl").string()));
  ASSERT_EQ(a.code, 0);
  EXPECT_NE(a.out.find("peak_rss_kib"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "profile.metrics.json"));

  auto rep = run("report " + quote((dir_ / "profile.jsonl").string()));
  ASSERT_EQ(rep.code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "report" / "profile.capacity.svg"));
}

TEST_F(Cli, WorkloadFailuresExitThree) {
  EXPECT_EQ(run("profile -- /bin/sh -c 'kill -SEGV $$'").code, 3);
  EXPECT_EQ(run("profile --force -- /bin/sh -c 'exit 4'").code, 3);
  EXPECT_EQ(run("profile --force --mode interrupt --stop-timeout 0.5 -- " +
                toucher("spin --seconds 10"))
                .code,
            3);
}

TEST_F(Cli, InterruptModeReportsColdFraction) {
  auto r = run("profile --mode interrupt -- " +
               toucher("touch --size 64M --fraction 0.25 --compute-s 0.2 --self-stop"));
  ASSERT_EQ(r.code, 0);
  auto a = run("analyze " + quote((dir_ / "profile.jsonl").string()));
  ASSERT_EQ(a.code, 0);
  EXPECT_NE(a.out.find("cold_fraction 0.7"), std::string::npos) << a.out;
}

TEST_F(Cli, PooledExperimentsOnASingleNodeAreEnvironmentErrors) {
  if (cxlmem::detect_topology().node_count() >= 2) GTEST_SKIP() << "host has several NUMA nodes";
  EXPECT_EQ(run("scale-links --max-links 1 -- /bin/true").code, 2);
  EXPECT_EQ(run("probe --policy remote_only --pool-nodes 1 --working-set 1M").code, 2);
}

TEST_F(Cli, ProbeAppendsResults) {
  ASSERT_EQ(run("probe --kind chase --working-set 1M --loads 100000").code, 0);
  ASSERT_EQ(run("probe --kind triad --working-set 24M --reps 2 --threads 1").code, 0);
  std::ifstream in(dir_ / "probes.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(json::parse(line)["format"], "cxlmem.probe");
    ++n;
  }
  EXPECT_EQ(n, 2);
}
