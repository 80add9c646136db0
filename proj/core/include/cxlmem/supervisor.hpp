#pragma once

#include <sys/types.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <latch>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <utility>
#include <vector>

#include "cxlmem/emulator.hpp"
#include "cxlmem/procfs.hpp"

namespace cxlmem {

/// A workload: argument vector plus environment overrides.
struct Command {
  std::vector<std::string> argv;
  std::vector<std::pair<std::string, std::string>> env;
};

enum class SamplingMode { Timer, Interrupt, OutputInterrupt };

std::string_view to_string(SamplingMode mode);
SamplingMode sampling_mode_from_string(std::string_view name);

struct SamplingPlan {
  SamplingMode mode = SamplingMode::Timer;
  double period_s = 1.0;
  // OutputInterrupt: matched against each complete stdout line.
  std::string pattern;
  bool pattern_is_regex = false;
  // Multi-process jobs: sample every process (emulator convention) or only
  // rank 0 (profiler convention). Neither set means every launched command.
  bool sample_all_processes = false;
  bool rank0_only = false;
  // Look for MPI ranks among the descendants of a launcher command, using
  // the rank variables the common MPI runtimes export.
  bool discover_ranks = false;
  // Interrupt mode: give up if no stop is seen within this many seconds.
  std::optional<double> stop_timeout_s;
  bool sample_node_pages = true;
};

/// Throws InvalidArgument for inconsistent plans and BadPattern for a
/// regular expression that does not compile.
void validate(const SamplingPlan& plan);

enum class SampleTrigger { Start, Timer, Stop, Match, Exit };
std::string_view to_string(SampleTrigger trigger);
SampleTrigger sample_trigger_from_string(std::string_view name);

struct Sample {
  procfs::MemSnapshot snapshot;
  SampleTrigger trigger = SampleTrigger::Timer;
  // Referenced bits were reset right after this sample was read.
  bool cleared = false;
  // False when the task no longer had an address space (exit samples).
  bool has_address_space = true;

  bool operator==(const Sample&) const = default;
};

enum class PhaseLabel { InitEnd, ComputeEnd, Interval };
std::string_view to_string(PhaseLabel label);
PhaseLabel phase_label_from_string(std::string_view name);

struct PhaseMark {
  std::int64_t timestamp_ns = 0;
  PhaseLabel label = PhaseLabel::Interval;

  bool operator==(const PhaseMark&) const = default;
};

/// Ordered samples of one supervised process (or, after aggregation, of a
/// whole job). Immutable once returned.
struct Profile {
  std::vector<pid_t> pids;
  std::vector<std::string> command;
  int rank = -1;
  SamplingMode mode = SamplingMode::Timer;
  double period_s = 1.0;
  std::int64_t start_monotonic_ns = 0;
  std::vector<Sample> samples;
  std::vector<PhaseMark> phase_marks;
  double wall_time_s = 0.0;
  int exit_status = 0;
  bool crashed = false;
  int term_signal = 0;
  // "rss" for single-process profiles; aggregation records its basis here.
  std::string basis = "rss";
  std::vector<std::string> warnings;

  std::size_t count(SampleTrigger trigger) const;
  bool operator==(const Profile&) const = default;
};

struct SupervisorOptions {
  // Armed in every launched child between fork and exec.
  std::optional<LaunchPolicy> policy;
  // Shared start barrier: children are launched stopped, the loop arrives
  // here, and all of them are resumed once every party has arrived.
  std::latch* start_gate = nullptr;
  // Requests termination of the job's children (SIGTERM, then SIGKILL).
  std::stop_token stop;
  // Captured standard output is forwarded here unmodified; -1 discards it.
  int forward_fd = STDOUT_FILENO;
  // How long to look for MPI ranks before falling back to the launcher.
  double rank_discovery_grace_s = 2.0;
};

/// Launches every command, samples per the plan, and returns one Profile per
/// sampled process. A child killed by a signal yields a profile with
/// `crashed` set rather than an exception.
std::vector<Profile> supervise_job(std::span<const Command> commands, const SamplingPlan& plan,
                                   const SupervisorOptions& options = {});

Profile run_profiled(const Command& command, const SamplingPlan& plan,
                     const ActiveComposition* composition = nullptr);
Profile run_interrupt_mode(const Command& command, const SamplingPlan& plan);
Profile run_output_interrupt(const Command& command, const SamplingPlan& plan);

struct PlainRun {
  double wall_time_s = 0.0;
  int exit_status = 0;
  bool crashed = false;
};

/// fork/exec/wait with the policy armed and no sampling; the baseline that
/// supervision overhead is measured against.
PlainRun run_unsupervised(const Command& command, const LaunchPolicy* policy = nullptr);

/// Descendants of `root` (children, grandchildren, ...) found in /proc.
std::vector<pid_t> find_descendants(pid_t root);

/// The MPI rank a process advertises in its environment, if any.
std::optional<int> read_process_rank(pid_t pid);

}  // namespace cxlmem
