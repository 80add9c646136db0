// cxlmem: profile a workload's memory use, emulate pooled memory on NUMA
// nodes, probe compositions and run sweep experiments.
//
// Exit codes: 0 success, 1 usage error, 2 environment or composition error,
// 3 workload failure.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "../common/byte_size.hpp"
#include "cxlmem/emulator.hpp"
#include "cxlmem/error.hpp"
#include "cxlmem/experiment.hpp"
#include "cxlmem/metrics.hpp"
#include "cxlmem/probes.hpp"
#include "cxlmem/profile_io.hpp"
#include "cxlmem/report.hpp"
#include "cxlmem/supervisor.hpp"
#include "cxlmem/topology.hpp"

namespace fs = std::filesystem;
using namespace cxlmem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitEnvironment = 2;
constexpr int kExitWorkload = 3;

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::InvalidArgument:
    case Errc::BadPattern:
    case Errc::ParseError:
    case Errc::EmptyInput:
    case Errc::MissingBaseline:
    case Errc::Missing75:
    case Errc::SpawnFailure:
      return kExitUsage;
    case Errc::CompositionUnsatisfiable:
    case Errc::PartialArming:
    case Errc::UnsupportedKernel:
    case Errc::PermissionDenied:
    case Errc::Io:
      return kExitEnvironment;
    case Errc::ProcessGone:
    case Errc::ChildNeverStopped:
    case Errc::WorkloadFailed:
      return kExitWorkload;
  }
  return kExitUsage;
}

fs::path default_output_dir() {
  const char* env = std::getenv("CXLMEM_OUTPUT_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("cxlmem-out");
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

void refuse_existing(const fs::path& p, bool force) {
  if (!force && fs::exists(p)) {
    throw Error(Errc::InvalidArgument, p.string() + " already exists; pass --force to overwrite");
  }
}

// Options shared by the experiment subcommands.
struct ExperimentFlags {
  std::string spec_file;
  std::vector<std::string> command;
  int repetitions = 0;
  std::string out_dir;
  int local_node = -1;
  int pool_node = -1;
  double period_s = 0.0;
  bool force = false;

  void attach(CLI::App* sub) {
    sub->add_option("--spec", spec_file, "experiment spec (JSON)");
    sub->add_option("--reps", repetitions, "repetitions per configuration (default 3)");
    sub->add_option("--out-dir", out_dir, "output directory (default $CXLMEM_OUTPUT_DIR)");
    sub->add_option("--local-node", local_node, "node standing in for local DRAM");
    sub->add_option("--pool-node", pool_node, "node standing in for the memory pool");
    sub->add_option("--period", period_s, "sampling period in seconds");
    sub->add_flag("--force", force, "overwrite existing outputs");
    sub->add_option("command", command, "workload command (after --)");
  }

  ExperimentSpec build(SweepKind kind) const {
    ExperimentSpec spec;
    if (!spec_file.empty()) spec = experiment_spec_from_json(read_text_file(spec_file));
    spec.sweep = kind;
    if (!command.empty()) spec.workload.argv = command;
    if (repetitions > 0) spec.repetitions = repetitions;
    if (!out_dir.empty()) spec.output_dir = out_dir;
    if (spec.output_dir.empty()) spec.output_dir = default_output_dir();
    if (local_node >= 0) spec.local_node = local_node;
    if (pool_node >= 0) spec.pool_node = pool_node;
    if (period_s > 0) spec.period_s = period_s;
    return spec;
  }
};

SamplingPlan timer_plan(double period_s) {
  SamplingPlan plan;
  plan.mode = SamplingMode::Timer;
  plan.period_s = period_s;
  return plan;
}

RunSink profile_sink(const fs::path& dir, const Topology& topo, bool force) {
  return [dir, &topo, force](const std::string& label, const RunOutcome& o) {
    if (o.profile) save_profile(dir / "runs" / (label + ".jsonl"), *o.profile, &topo, force);
    std::fprintf(stderr, "cxlmem: %s: %.3f s%s\n", label.c_str(), o.seconds,
                 o.ok() ? "" : " (failed)");
  };
}

// ---- subcommands ----

struct ProfileFlags {
  std::string mode = "timer";
  double period_s = 1.0;
  std::string pattern;
  bool regex = false;
  bool all_processes = false;
  bool rank0 = false;
  bool discover = false;
  double stop_timeout_s = 0.0;
  bool no_node_pages = false;
  std::string composition_file;
  std::string out;
  bool force = false;
  std::vector<std::string> command;
};

int cmd_profile(const ProfileFlags& f) {
  if (f.command.empty()) throw Error(Errc::InvalidArgument, "no workload command given");
  SamplingPlan plan;
  plan.mode = sampling_mode_from_string(f.mode);
  plan.period_s = f.period_s;
  plan.pattern = f.pattern;
  plan.pattern_is_regex = f.regex;
  plan.sample_all_processes = f.all_processes;
  plan.rank0_only = f.rank0;
  plan.discover_ranks = f.discover || f.rank0 || f.all_processes;
  if (f.stop_timeout_s > 0) plan.stop_timeout_s = f.stop_timeout_s;
  plan.sample_node_pages = !f.no_node_pages;
  validate(plan);

  fs::path out = f.out.empty() ? default_output_dir() / "profile.jsonl" : fs::path(f.out);
  refuse_existing(out, f.force);

  Topology topo = detect_topology();
  SupervisorOptions options;
  std::optional<ActiveComposition> active;
  if (!f.composition_file.empty()) {
    active.emplace(apply_composition(composition_from_json(read_text_file(f.composition_file)), topo));
    options.policy = active->launch_policy();
  }
  Command cmd{f.command, {}};
  auto profiles = supervise_job(std::span(&cmd, 1), plan, options);

  int code = kExitOk;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const Profile& p = profiles[i];
    fs::path path = out;
    if (profiles.size() > 1) {
      std::string suffix = p.rank >= 0 ? ".rank" + std::to_string(p.rank) : "." + std::to_string(i);
      path = out.parent_path() / (out.stem().string() + suffix + out.extension().string());
    }
    save_profile(path, p, &topo, f.force);
    std::printf("%s: %zu samples, %.3f s, exit %d%s\n", path.c_str(), p.samples.size(),
                p.wall_time_s, p.exit_status, p.crashed ? " (crashed)" : "");
    for (const auto& w : p.warnings) std::fprintf(stderr, "cxlmem: warning: %s\n", w.c_str());
    if (p.crashed || p.exit_status != 0) code = kExitWorkload;
  }
  return code;
}

int cmd_analyze(const std::vector<std::string>& inputs, const std::string& basis,
                const std::string& cold_basis, const std::string& out_dir_flag, bool force) {
  if (inputs.empty()) throw Error(Errc::EmptyInput, "no profiles given");
  std::vector<Profile> profiles;
  for (const auto& in : inputs) profiles.push_back(load_profile(in));

  Profile subject = profiles.size() == 1
                        ? profiles.front()
                        : aggregate(profiles, aggregate_basis_from_string(basis));
  DeriveOptions options;
  if (cold_basis == "peak") options.cold_basis = ColdBasis::PeakRss;
  else if (cold_basis != "final") throw Error(Errc::InvalidArgument, "--cold-basis is final or peak");
  DerivedMetrics m = derive(subject, options);

  fs::path dir = out_dir_flag.empty() ? default_output_dir() : fs::path(out_dir_flag);
  std::string stem = profiles.size() == 1 ? fs::path(inputs.front()).stem().string() : "job";
  Topology topo = detect_topology();
  write_output_file(dir / (stem + ".metrics.json"), metrics_json(m, subject, topo), force);
  write_output_file(dir / (stem + ".metrics.csv"), metrics_csv(m), force);

  std::printf("peak_rss_kib %llu\n", static_cast<unsigned long long>(m.peak_rss_kib));
  if (m.cold_fraction) std::printf("cold_fraction %.4f\n", *m.cold_fraction);
  std::printf("mean_touched_fraction %.4f\n", m.mean_touched_fraction);
  std::printf("mean_est_bandwidth_bytes_per_s %.0f\n", m.mean_est_bandwidth);
  std::printf("basis %s\n", m.aggregate_basis.c_str());
  for (const auto& w : m.warnings) std::fprintf(stderr, "cxlmem: warning: %s\n", w.c_str());
  return kExitOk;
}

int cmd_sweep(const ExperimentFlags& flags, const std::vector<double>& fractions,
              const std::string& peak, double t1, double t2) {
  ExperimentSpec spec = flags.build(SweepKind::CapacityFractions);
  if (!fractions.empty()) spec.fractions = fractions;
  if (!peak.empty()) spec.peak_usage_bytes = tools::parse_byte_size(peak);
  if (t1 >= 0) spec.thresholds.t1 = t1;
  if (t2 >= 0) spec.thresholds.t2 = t2;
  validate(spec);
  fs::path json_path = spec.output_dir / "sweep.json";
  refuse_existing(json_path, flags.force);

  SystemRunner runner(timer_plan(spec.period_s));
  const Topology& topo = runner.topology();
  CapacitySweepResult r = sweep_capacity(spec, runner, profile_sink(spec.output_dir, topo, flags.force));
  write_output_file(json_path, sweep_json(r, spec, topo), flags.force);
  write_output_file(spec.output_dir / "sweep.csv", sweep_csv(r), flags.force);

  std::fputs(sweep_csv(r).c_str(), stdout);
  if (r.report) std::printf("class %s\n", std::string(to_string(r.report->sensitivity)).c_str());
  else std::printf("class unassigned: %s\n", r.unclassified_reason.c_str());
  return r.any_failed() ? kExitWorkload : kExitOk;
}

int cmd_scale_links(const ExperimentFlags& flags, int max_links, bool no_local,
                    const std::vector<int>& link_nodes) {
  ExperimentSpec spec = flags.build(SweepKind::LinkScaling);
  if (max_links >= 0) spec.max_links = max_links;
  if (no_local) spec.local_in_interleave = false;
  if (!link_nodes.empty()) spec.link_nodes = link_nodes;
  validate(spec);
  fs::path json_path = spec.output_dir / "scaling.json";
  refuse_existing(json_path, flags.force);

  SystemRunner runner(timer_plan(spec.period_s));
  const Topology& topo = runner.topology();
  LinkScalingResult r = scale_links(spec, runner, profile_sink(spec.output_dir, topo, flags.force));
  write_output_file(json_path, scaling_json(r, spec, topo), flags.force);
  write_output_file(spec.output_dir / "scaling.csv", scaling_csv(r), flags.force);
  std::fputs(scaling_csv(r).c_str(), stdout);
  return r.any_failed() ? kExitWorkload : kExitOk;
}

int cmd_sharing(const ExperimentFlags& flags, int hosts, const std::vector<std::string>& co_runners,
                bool same, double pooled_fraction, const std::string& peak) {
  ExperimentSpec spec = flags.build(SweepKind::Sharing);
  if (hosts > 0) spec.hosts = hosts;
  for (const auto& c : co_runners) spec.co_runners.push_back(Command{split_words(c), {}});
  if (same) spec.same_mix = true;
  if (pooled_fraction > 0) spec.sharing_pooled_fraction = pooled_fraction;
  if (!peak.empty()) spec.peak_usage_bytes = tools::parse_byte_size(peak);
  validate(spec);
  fs::path json_path = spec.output_dir / "sharing.json";
  refuse_existing(json_path, flags.force);

  SystemRunner runner(timer_plan(spec.period_s));
  const Topology& topo = runner.topology();
  SharingResult r = run_sharing(spec, runner, profile_sink(spec.output_dir, topo, flags.force));
  write_output_file(json_path, sharing_json(r, spec, topo), flags.force);
  write_output_file(spec.output_dir / "sharing.csv", sharing_csv(r), flags.force);
  std::fputs(sharing_csv(r).c_str(), stdout);
  return r.any_failed() ? kExitWorkload : kExitOk;
}

struct ProbeFlags {
  std::string kind = "triad";
  std::string composition_file;
  std::string policy = "local_only";
  int local_node = 0;
  std::vector<int> pool_nodes;
  std::string working_set = "1G";
  int threads = 0;
  int reps = 10;
  std::uint64_t seed = 0x5eed;
  std::uint64_t loads = 0;
  std::string results;
};

int cmd_probe(const ProbeFlags& f) {
  Topology topo = detect_topology();
  Composition c;
  if (!f.composition_file.empty()) {
    c = composition_from_json(read_text_file(f.composition_file));
  } else {
    CompositionKind kind = composition_kind_from_string(f.policy);
    if (kind == CompositionKind::LocalOnly) {
      c = local_only(f.local_node);
    } else if (f.pool_nodes.empty()) {
      throw Error(Errc::InvalidArgument, "--pool-nodes is required for " + f.policy);
    } else if (kind == CompositionKind::RemoteOnly) {
      c = remote_only(f.local_node, f.pool_nodes.front());
    } else if (kind == CompositionKind::BandwidthInterleave) {
      c = bandwidth_interleave(f.local_node, f.pool_nodes);
    } else {
      throw Error(Errc::InvalidArgument, "probe policies: local_only, remote_only, bandwidth_interleave");
    }
  }
  ActiveComposition active = apply_composition(c, topo);
  std::uint64_t ws = tools::parse_byte_size(f.working_set);
  ProbeResult r;
  if (probe_kind_from_string(f.kind) == ProbeKind::Triad) {
    r = triad(TriadOptions{ws, f.threads, f.reps, 3.0}, &active);
  } else {
    r = chase(ChaseOptions{ws, f.seed, f.loads}, &active);
  }
  std::string line = probe_json_line(r, topo);
  fs::path results = f.results.empty() ? default_output_dir() / "probes.jsonl" : fs::path(f.results);
  if (results.has_parent_path()) fs::create_directories(results.parent_path());
  std::ofstream(results, std::ios::app) << line;
  std::printf("%s %s: %.3f %s%s\n", f.kind.c_str(), r.composition.c_str(), r.value,
              r.kind == ProbeKind::Triad ? "GB/s" : "ns/load", r.valid ? "" : " (invalid)");
  if (!r.valid) std::fprintf(stderr, "cxlmem: warning: %s\n", r.note.c_str());
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_dir_flag, bool force) {
  if (inputs.empty()) throw Error(Errc::EmptyInput, "report needs at least one input file");
  std::vector<fs::path> paths(inputs.begin(), inputs.end());
  RenderedReport rendered = render_report(paths);
  fs::path dir = out_dir_flag.empty() ? default_output_dir() / "report" : fs::path(out_dir_flag);
  for (const auto& file : rendered.files) refuse_existing(dir / file.name, force);
  for (const auto& file : rendered.files) write_output_file(dir / file.name, file.contents, force);
  std::fputs(rendered.summary.c_str(), stdout);
  std::printf("wrote %zu files to %s\n", rendered.files.size(), dir.c_str());
  return kExitOk;
}

int cmd_topology() {
  Topology topo = detect_topology();
  std::printf("%s\n", topology_to_json(topo).c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Memory-pool profiling and emulation on NUMA machines"};
  app.require_subcommand(1);

  ProfileFlags pf;
  auto* profile = app.add_subcommand("profile", "sample a workload's memory use");
  profile->add_option("--mode", pf.mode, "timer, interrupt or output")
      ->check(CLI::IsMember({"timer", "interrupt", "output"}))
      ->capture_default_str();
  profile->add_option("--period", pf.period_s, "timer period in seconds")->capture_default_str();
  profile->add_option("--pattern", pf.pattern, "output mode: sample when a stdout line contains this");
  profile->add_flag("--regex", pf.regex, "treat --pattern as a regular expression");
  profile->add_flag("--all-processes", pf.all_processes, "sample every MPI rank");
  profile->add_flag("--rank0", pf.rank0, "sample MPI rank 0 only");
  profile->add_flag("--discover-ranks", pf.discover, "look for MPI ranks under the launcher");
  profile->add_option("--stop-timeout", pf.stop_timeout_s, "interrupt mode: give up after this many seconds");
  profile->add_flag("--no-node-pages", pf.no_node_pages, "skip per-node page counts");
  profile->add_option("--composition", pf.composition_file, "run under this composition (JSON)");
  profile->add_option("-o,--out", pf.out, "profile file (default $CXLMEM_OUTPUT_DIR/profile.jsonl)");
  profile->add_flag("--force", pf.force, "overwrite existing outputs");
  profile->add_option("command", pf.command, "workload command (after --)");

  std::vector<std::string> analyze_inputs;
  std::string basis = "rss", cold_basis = "final", analyze_out;
  bool analyze_force = false;
  auto* analyze = app.add_subcommand("analyze", "derive metrics from profiles");
  analyze->add_option("profiles", analyze_inputs, "profile files; several are aggregated")->required();
  analyze->add_option("--basis", basis, "aggregation basis: rss or pss")->capture_default_str();
  analyze->add_option("--cold-basis", cold_basis, "cold fraction denominator: final or peak")
      ->capture_default_str();
  analyze->add_option("--out-dir", analyze_out, "output directory");
  analyze->add_flag("--force", analyze_force, "overwrite existing outputs");

  ExperimentFlags sweep_flags;
  std::vector<double> fractions;
  std::string sweep_peak;
  double t1 = -1, t2 = -1;
  auto* sweep = app.add_subcommand("sweep-capacity", "run at several pooled-memory fractions");
  sweep_flags.attach(sweep);
  sweep->add_option("--fractions", fractions, "pooled fractions (default 0 .25 .5 .75 1)");
  sweep->add_option("--peak", sweep_peak, "peak usage; calibrated with a LocalOnly run if absent");
  sweep->add_option("--t1", t1, "class I/II threshold (default 0.05)");
  sweep->add_option("--t2", t2, "class II/III threshold (default 0.20)");

  ExperimentFlags scale_flags;
  int max_links = -1;
  bool no_local = false;
  std::vector<int> link_nodes;
  auto* scale = app.add_subcommand("scale-links", "interleave over a growing number of pool nodes");
  scale_flags.attach(scale);
  scale->add_option("--max-links", max_links, "largest link count (default 1)");
  scale->add_flag("--no-local", no_local, "leave the local node out of the interleave");
  scale->add_option("--link-nodes", link_nodes, "pool nodes in the order links are added");

  ExperimentFlags share_flags;
  int hosts = 0;
  std::vector<std::string> co_runners;
  bool same = false;
  double share_fraction = 0.0;
  std::string share_peak;
  auto* share = app.add_subcommand("sharing", "run co-located jobs sharing one pool node");
  share_flags.attach(share);
  share->add_option("--hosts", hosts, "emulated hosts including the subject");
  share->add_option("--co-runner", co_runners, "co-runner command line (split on spaces)");
  share->add_flag("--same", same, "also run copies of the subject as co-runners");
  share->add_option("--pooled-fraction", share_fraction, "capacity split per host instead of interleave");
  share->add_option("--peak", share_peak, "per-host peak usage for --pooled-fraction");

  ProbeFlags prf;
  auto* probe = app.add_subcommand("probe", "measure a composition with triad or pointer chase");
  probe->add_option("--kind", prf.kind, "triad or chase")
      ->check(CLI::IsMember({"triad", "chase"}))
      ->capture_default_str();
  probe->add_option("--composition", prf.composition_file, "composition (JSON)");
  probe->add_option("--policy", prf.policy, "local_only, remote_only or bandwidth_interleave")
      ->capture_default_str();
  probe->add_option("--local-node", prf.local_node)->capture_default_str();
  probe->add_option("--pool-nodes", prf.pool_nodes);
  probe->add_option("--working-set", prf.working_set)->capture_default_str();
  probe->add_option("--threads", prf.threads, "triad threads (0: all allowed CPUs)");
  probe->add_option("--reps", prf.reps, "triad repetitions, best reported")->capture_default_str();
  probe->add_option("--seed", prf.seed, "chase permutation seed")->capture_default_str();
  probe->add_option("--loads", prf.loads, "chase loads (0: automatic)");
  probe->add_option("--results", prf.results, "results file, appended (default $CXLMEM_OUTPUT_DIR/probes.jsonl)");

  std::vector<std::string> report_inputs;
  std::string report_out;
  bool report_force = false;
  auto* report = app.add_subcommand("report", "render CSV tables and SVG charts");
  report->add_option("inputs", report_inputs, "profiles and experiment reports");
  report->add_option("--out-dir", report_out, "output directory");
  report->add_flag("--force", report_force, "overwrite existing outputs");

  auto* topology = app.add_subcommand("topology", "print the NUMA topology as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    procfs::require_supported_kernel();
    if (profile->parsed()) return cmd_profile(pf);
    if (analyze->parsed()) return cmd_analyze(analyze_inputs, basis, cold_basis, analyze_out, analyze_force);
    if (sweep->parsed()) return cmd_sweep(sweep_flags, fractions, sweep_peak, t1, t2);
    if (scale->parsed()) return cmd_scale_links(scale_flags, max_links, no_local, link_nodes);
    if (share->parsed()) return cmd_sharing(share_flags, hosts, co_runners, same, share_fraction, share_peak);
    if (probe->parsed()) return cmd_probe(prf);
    if (report->parsed()) return cmd_report(report_inputs, report_out, report_force);
    if (topology->parsed()) return cmd_topology();
  } catch (const Error& e) {
    std::fprintf(stderr, "cxlmem: %s: %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return exit_code_for(e.code());
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "cxlmem: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cxlmem: %s\n", e.what());
    return kExitEnvironment;
  }
  return kExitUsage;
}
