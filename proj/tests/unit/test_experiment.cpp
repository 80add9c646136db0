#include <gtest/gtest.h>

#include <functional>

#include "cxlmem/error.hpp"
#include "cxlmem/experiment.hpp"
#include "test_support.hpp"

using namespace cxlmem;

namespace {

// Time model: base seconds, stretched by the pooled share of memory and
// shortened by extra interleave links; co-runners on a shared pool add
// contention.
class FakeRunner final : public WorkloadRunner {
 public:
  FakeRunner(int nodes, double penalty) : topo_(test::fake_topology(nodes)), penalty_(penalty) {}

  const Topology& topology() const override { return topo_; }

  RunOutcome run(const Command& command, const Composition& c) override {
    check_satisfiable(c, topo_);
    seen.push_back(c);
    return outcome(command, c, 0);
  }

  std::vector<RunOutcome> run_together(std::span<const Command> commands,
                                       std::span<const Composition> compositions) override {
    together_sizes.push_back(commands.size());
    std::vector<RunOutcome> out;
    for (std::size_t i = 0; i < commands.size(); ++i) {
      out.push_back(outcome(commands[i], compositions[i], static_cast<int>(commands.size()) - 1));
    }
    return out;
  }

  std::vector<Composition> seen;
  std::vector<std::size_t> together_sizes;
  std::function<bool(const Composition&)> fail_when;

 private:
  RunOutcome outcome(const Command& command, const Composition& c, int contenders) {
    RunOutcome o;
    if (fail_when && fail_when(c)) {
      o.exit_status = 1;
      return o;
    }
    double pooled = 0.0;
    switch (c.kind) {
      case CompositionKind::LocalOnly: pooled = 0.0; break;
      case CompositionKind::CapacitySplit: pooled = c.pooled_fraction; break;
      case CompositionKind::RemoteOnly: pooled = 1.0; break;
      default: pooled = 0.5; break;
    }
    double base = command.argv.empty() || command.argv[0] != "spinner" ? 10.0 : 5.0;
    double pen = command.argv[0] == "spinner" ? 0.0 : penalty_;
    o.seconds = base * (1.0 + pen * pooled) * (1.0 + 0.1 * contenders);
    if (c.kind == CompositionKind::BandwidthInterleave || c.kind == CompositionKind::SharedPool) {
      o.seconds /= 1.0 + 0.5 * static_cast<double>(c.pool_nodes.size());
    }
    Profile p;
    for (int i = 0; i < 3; ++i) {
      Sample s;
      s.snapshot.timestamp_ns = i;
      s.snapshot.rss_kib = 1024u * 1024u * (i + 1);
      p.samples.push_back(s);
    }
    o.profile = p;
    return o;
  }

  Topology topo_;
  double penalty_;
};

ExperimentSpec spec_for(std::string program) {
  ExperimentSpec s;
  s.workload.argv = {std::move(program)};
  s.repetitions = 3;
  return s;
}

}  // namespace

TEST(SweepCapacity, CalibratesThenRunsEveryFraction) {
  FakeRunner runner(2, 0.6);
  auto r = sweep_capacity(spec_for("stream"), runner);
  EXPECT_TRUE(r.calibrated);
  EXPECT_EQ(r.peak_usage_bytes, 3ull * kGiB);
  ASSERT_EQ(r.runs.size(), 5u);
  EXPECT_EQ(runner.seen.size(), 1u + 5u * 3u);
  EXPECT_EQ(r.runs[0].composition.kind, CompositionKind::LocalOnly);
  EXPECT_EQ(r.runs[2].composition.kind, CompositionKind::CapacitySplit);
  EXPECT_EQ(r.runs[2].composition.peak_usage_bytes, 3ull * kGiB);
  EXPECT_EQ(r.runs[4].composition.kind, CompositionKind::RemoteOnly);
  ASSERT_TRUE(r.report);
  EXPECT_NEAR(r.report->slowdown_by_fraction.at(0.75), 0.45, 1e-12);
  EXPECT_EQ(r.report->sensitivity, SensitivityClass::III);
  EXPECT_FALSE(r.any_failed());
}

TEST(SweepCapacity, SpinnerIsClassOne) {
  FakeRunner runner(2, 0.6);
  auto r = sweep_capacity(spec_for("spinner"), runner);
  ASSERT_TRUE(r.report);
  EXPECT_EQ(r.report->sensitivity, SensitivityClass::I);
}

TEST(SweepCapacity, KnownPeakSkipsCalibrationAndLabelsRuns) {
  FakeRunner runner(2, 0.1);
  ExperimentSpec s = spec_for("stream");
  s.peak_usage_bytes = 2 * kGiB;
  std::vector<std::string> labels;
  auto r = sweep_capacity(s, runner, [&](const std::string& l, const RunOutcome&) { labels.push_back(l); });
  EXPECT_FALSE(r.calibrated);
  EXPECT_EQ(labels.size(), 15u);
  EXPECT_EQ(labels.front(), "f0-rep1");
  EXPECT_EQ(r.report->sensitivity, SensitivityClass::II);
}

TEST(SweepCapacity, SingleNodeSkipsPooledFractionsAndStaysUnclassified) {
  FakeRunner runner(1, 0.6);
  auto r = sweep_capacity(spec_for("stream"), runner);
  ASSERT_EQ(r.runs.size(), 5u);
  EXPECT_TRUE(r.runs[0].median_seconds.has_value());
  for (std::size_t i = 1; i < 5; ++i) EXPECT_TRUE(r.runs[i].skipped);
  EXPECT_FALSE(r.report);
  EXPECT_NE(r.unclassified_reason.find("Missing75"), std::string::npos) << r.unclassified_reason;
}

TEST(SweepCapacity, FailedRunsAreRecorded) {
  FakeRunner runner(2, 0.6);
  runner.fail_when = [](const Composition& c) { return c.kind == CompositionKind::RemoteOnly; };
  auto r = sweep_capacity(spec_for("stream"), runner);
  EXPECT_TRUE(r.runs[4].failed);
  EXPECT_TRUE(r.any_failed());
  EXPECT_TRUE(r.report);
}

TEST(SweepCapacity, FailedCalibrationIsAWorkloadError) {
  FakeRunner runner(2, 0.6);
  runner.fail_when = [](const Composition&) { return true; };
  try {
    sweep_capacity(spec_for("stream"), runner);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::WorkloadFailed);
  }
}

TEST(ScaleLinks, SpeedupGrowsWithLinks) {
  FakeRunner runner(4, 0.6);
  ExperimentSpec s = spec_for("stream");
  s.sweep = SweepKind::LinkScaling;
  s.max_links = 3;
  auto r = scale_links(s, runner);
  ASSERT_EQ(r.runs.size(), 4u);
  EXPECT_DOUBLE_EQ(*r.runs[0].speedup, 1.0);
  for (std::size_t i = 1; i < r.runs.size(); ++i) {
    EXPECT_EQ(r.runs[i].composition.link_count, static_cast<int>(i));
  }
}

TEST(ScaleLinks, TooFewNodesIsUnsatisfiable) {
  FakeRunner runner(1, 0.6);
  ExperimentSpec s = spec_for("stream");
  s.max_links = 1;
  try {
    scale_links(s, runner);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CompositionUnsatisfiable);
  }
}

TEST(Sharing, MixesAndSlowdowns) {
  FakeRunner runner(4, 0.6);
  ExperimentSpec s = spec_for("stream");
  s.sweep = SweepKind::Sharing;
  s.hosts = 3;
  s.same_mix = true;
  s.co_runners = {Command{{"spinner"}, {}}};
  auto r = run_sharing(s, runner);
  EXPECT_EQ(r.pool_node, 1);
  ASSERT_EQ(r.configs.size(), 3u);
  EXPECT_EQ(r.configs[0].label, "private");
  EXPECT_EQ(r.configs[1].label, "same");
  EXPECT_EQ(r.configs[2].label, "other");
  EXPECT_DOUBLE_EQ(*r.configs[0].slowdown_vs_private, 0.0);
  EXPECT_NEAR(*r.configs[1].slowdown_vs_private, 0.2, 1e-12);
  EXPECT_EQ(runner.together_sizes, (std::vector<std::size_t>(6, 3)));
}

TEST(ExperimentSpecJson, RoundTripAndValidation) {
  ExperimentSpec s = spec_for("stream");
  s.workload.argv.push_back("--size=1G");
  s.fractions = {0.0, 0.75};
  s.pool_node = 2;
  s.thresholds = {0.1, 0.3};
  ExperimentSpec back = experiment_spec_from_json(experiment_spec_to_json(s));
  EXPECT_EQ(back.workload.argv, s.workload.argv);
  EXPECT_EQ(back.fractions, s.fractions);
  EXPECT_EQ(back.pool_node, s.pool_node);
  EXPECT_DOUBLE_EQ(back.thresholds.t2, 0.3);

  ExperimentSpec bad = s;
  bad.repetitions = 0;
  EXPECT_THROW(validate(bad), Error);
  bad = s;
  bad.fractions = {1.5};
  EXPECT_THROW(validate(bad), Error);
  bad = s;
  bad.workload.argv.clear();
  EXPECT_THROW(validate(bad), Error);
}

TEST(DefaultPoolNode, LowestOtherNode) {
  EXPECT_EQ(default_pool_node(test::fake_topology(3), 0), 1);
  EXPECT_EQ(default_pool_node(test::fake_topology(3), 1), 0);
  EXPECT_EQ(default_pool_node(test::fake_topology(1), 0), std::nullopt);
}
