#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxlmem/emulator.hpp"
#include "cxlmem/metrics.hpp"
#include "cxlmem/supervisor.hpp"
#include "cxlmem/topology.hpp"

namespace cxlmem {

enum class SweepKind { CapacityFractions, LinkScaling, Sharing };
std::string_view to_string(SweepKind kind);
SweepKind sweep_kind_from_string(std::string_view name);

inline const std::vector<double> kDefaultFractions = {0.0, 0.25, 0.5, 0.75, 1.0};

struct ExperimentSpec {
  Command workload;
  SweepKind sweep = SweepKind::CapacityFractions;

  std::vector<double> fractions = kDefaultFractions;
  int max_links = 1;
  bool local_in_interleave = true;
  std::vector<int> link_nodes;  // empty: every node but the local one, by id
  int hosts = 1;
  std::vector<Command> co_runners;
  bool same_mix = false;  // also run hosts-1 copies of the workload
  // Sharing: 0 interleaves each host over {local, pool}; otherwise a
  // capacity split with this pooled fraction.
  double sharing_pooled_fraction = 0.0;

  int repetitions = 3;
  std::filesystem::path output_dir;
  int local_node = 0;
  std::optional<int> pool_node;
  // 0 asks for a LocalOnly calibration run first.
  std::uint64_t peak_usage_bytes = 0;
  std::uint64_t lock_headroom_bytes = kDefaultLockHeadroom;
  double period_s = 1.0;
  Thresholds thresholds;
};

/// Throws InvalidArgument.
void validate(const ExperimentSpec& spec);
/// Reads the JSON form of an experiment; omitted fields keep their defaults.
ExperimentSpec experiment_spec_from_json(std::string_view text);
std::string experiment_spec_to_json(const ExperimentSpec& spec);

struct RunOutcome {
  double seconds = 0.0;
  int exit_status = 0;
  bool crashed = false;
  std::optional<Profile> profile;

  bool ok() const { return exit_status == 0 && !crashed; }
};

/// Executes workloads under compositions. The system implementation arms
/// real compositions; tests substitute a fake.
class WorkloadRunner {
 public:
  virtual ~WorkloadRunner() = default;
  virtual const Topology& topology() const = 0;
  /// Throws CompositionUnsatisfiable (or PartialArming) when `c` cannot be
  /// armed.
  virtual RunOutcome run(const Command& command, const Composition& c) = 0;
  /// Runs commands[i] under compositions[i], all started together. The
  /// others are terminated once commands[0] finishes. Outcomes are in input
  /// order.
  virtual std::vector<RunOutcome> run_together(std::span<const Command> commands,
                                               std::span<const Composition> compositions) = 0;
};

class SystemRunner final : public WorkloadRunner {
 public:
  explicit SystemRunner(SamplingPlan plan, Topology topo = detect_topology());

  const Topology& topology() const override { return topo_; }
  RunOutcome run(const Command& command, const Composition& c) override;
  std::vector<RunOutcome> run_together(std::span<const Command> commands,
                                       std::span<const Composition> compositions) override;

 private:
  SamplingPlan plan_;
  Topology topo_;
};

/// Called after every run with a label such as "f0.25-rep2".
using RunSink = std::function<void(const std::string& label, const RunOutcome& outcome)>;

struct FractionRun {
  double fraction = 0.0;
  Composition composition;
  std::vector<double> seconds;
  std::optional<double> median_seconds;
  bool skipped = false;
  bool failed = false;
  std::string reason;
};

struct CapacitySweepResult {
  std::uint64_t peak_usage_bytes = 0;
  bool calibrated = false;
  std::vector<FractionRun> runs;
  std::optional<SensitivityReport> report;
  std::string unclassified_reason;

  bool any_failed() const;
};

/// fraction 0 runs LocalOnly, 1 RemoteOnly, anything between a capacity
/// split. Unsatisfiable fractions are skipped and the sweep goes on.
CapacitySweepResult sweep_capacity(const ExperimentSpec& spec, WorkloadRunner& runner,
                                   const RunSink& sink = {});

struct LinkRun {
  int links = 0;
  Composition composition;
  std::vector<double> seconds;
  std::optional<double> median_seconds;
  std::optional<double> speedup;
  bool failed = false;
  std::string reason;
};

struct LinkScalingResult {
  std::vector<LinkRun> runs;
  bool any_failed() const;
};

/// 0 links is LocalOnly; k links interleaves over k pool nodes. Throws
/// CompositionUnsatisfiable when the host lacks max_links pool nodes.
LinkScalingResult scale_links(const ExperimentSpec& spec, WorkloadRunner& runner,
                              const RunSink& sink = {});

struct SharingConfig {
  std::string label;  // "private", "same" or "other"
  int co_runners = 0;
  std::vector<Composition> compositions;
  std::vector<double> seconds;
  double mean_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  std::optional<double> slowdown_vs_private;
  bool failed = false;
  std::string reason;
};

struct SharingResult {
  int pool_node = -1;
  std::vector<SharingConfig> configs;
  bool any_failed() const;
};

/// The subject runs on host 0, co-runners on hosts 1..k-1, all sharing one
/// pool node. "private" is the subject alone on an unshared pool.
SharingResult run_sharing(const ExperimentSpec& spec, WorkloadRunner& runner,
                          const RunSink& sink = {});

/// The composition a capacity sweep uses for `fraction`.
Composition sweep_composition(double fraction, int local_node, std::optional<int> pool_node,
                              std::uint64_t peak_usage_bytes, std::uint64_t headroom);

/// Default pool node: the lowest-numbered node other than `local_node`.
std::optional<int> default_pool_node(const Topology& topo, int local_node);

}  // namespace cxlmem
