#include "cxlmem/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <latch>
#include <numeric>
#include <sstream>
#include <stop_token>
#include <thread>

#include "cxlmem/error.hpp"
#include "json_support.hpp"

namespace cxlmem {

using nlohmann::json;

namespace {

std::string fraction_label(double f) {
  std::ostringstream ss;
  ss << "f" << f;
  return ss.str();
}

bool composition_error(const Error& e) {
  return e.code() == Errc::CompositionUnsatisfiable || e.code() == Errc::PartialArming;
}

std::string failure_reason(const RunOutcome& o) {
  return o.crashed ? "workload crashed (exit status " + std::to_string(o.exit_status) + ")"
                   : "workload exited with status " + std::to_string(o.exit_status);
}

json command_to_json(const Command& c) {
  json env = json::object();
  for (const auto& [k, v] : c.env) env[k] = v;
  return {{"argv", c.argv}, {"env", env}};
}

Command command_from_json(const json& j) {
  Command c;
  if (j.is_array()) {
    c.argv = j.get<std::vector<std::string>>();
    return c;
  }
  c.argv = j.at("argv").get<std::vector<std::string>>();
  if (j.contains("env")) {
    for (const auto& [k, v] : j.at("env").items()) c.env.emplace_back(k, v.get<std::string>());
  }
  return c;
}

std::uint64_t peak_bytes(const Profile& p) {
  std::uint64_t peak = 0;
  for (const auto& s : p.samples) peak = std::max(peak, s.snapshot.rss_kib);
  return peak * 1024;
}

}  // namespace

std::string_view to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::CapacityFractions: return "capacity_fractions";
    case SweepKind::LinkScaling: return "link_scaling";
    case SweepKind::Sharing: return "sharing";
  }
  return "?";
}

SweepKind sweep_kind_from_string(std::string_view name) {
  if (name == "capacity_fractions") return SweepKind::CapacityFractions;
  if (name == "link_scaling") return SweepKind::LinkScaling;
  if (name == "sharing") return SweepKind::Sharing;
  throw Error(Errc::InvalidArgument, "unknown sweep '" + std::string(name) + "'");
}

void validate(const ExperimentSpec& spec) {
  if (spec.workload.argv.empty()) throw Error(Errc::InvalidArgument, "experiment has no workload");
  if (spec.repetitions < 1) throw Error(Errc::InvalidArgument, "repetitions must be >= 1");
  if (spec.period_s <= 0.0) throw Error(Errc::InvalidArgument, "period must be positive");
  for (double f : spec.fractions) {
    if (!(f >= 0.0 && f <= 1.0)) {
      throw Error(Errc::InvalidArgument, "pooled fractions must lie in [0, 1]");
    }
  }
  if (spec.sweep == SweepKind::CapacityFractions && spec.fractions.empty()) {
    throw Error(Errc::InvalidArgument, "capacity sweep needs at least one fraction");
  }
  if (spec.max_links < 0) throw Error(Errc::InvalidArgument, "max_links must be >= 0");
  if (spec.hosts < 1) throw Error(Errc::InvalidArgument, "hosts must be >= 1");
  if (!(spec.sharing_pooled_fraction >= 0.0 && spec.sharing_pooled_fraction < 1.0)) {
    throw Error(Errc::InvalidArgument, "sharing pooled fraction must lie in [0, 1)");
  }
  for (const auto& c : spec.co_runners) {
    if (c.argv.empty()) throw Error(Errc::InvalidArgument, "empty co-runner command");
  }
  if (!(spec.thresholds.t1 >= 0.0 && spec.thresholds.t1 <= spec.thresholds.t2)) {
    throw Error(Errc::InvalidArgument, "thresholds must satisfy 0 <= t1 <= t2");
  }
}

ExperimentSpec experiment_spec_from_json(std::string_view text) {
  json j = detail::parse_json(text, "experiment spec");
  ExperimentSpec spec;
  try {
    spec.workload = command_from_json(j.at("workload"));
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      spec.sweep = sweep_kind_from_string(s.at("kind").get<std::string>());
      spec.fractions = s.value("fractions", spec.fractions);
      spec.max_links = s.value("max_links", spec.max_links);
      spec.local_in_interleave = s.value("local_in_interleave", spec.local_in_interleave);
      spec.link_nodes = s.value("link_nodes", spec.link_nodes);
      spec.hosts = s.value("hosts", spec.hosts);
      spec.same_mix = s.value("same_mix", spec.same_mix);
      spec.sharing_pooled_fraction = s.value("pooled_fraction", spec.sharing_pooled_fraction);
      if (s.contains("co_runners")) {
        for (const auto& c : s.at("co_runners")) spec.co_runners.push_back(command_from_json(c));
      }
    }
    spec.repetitions = j.value("repetitions", spec.repetitions);
    spec.output_dir = j.value("output_dir", std::string());
    spec.local_node = j.value("local_node", spec.local_node);
    if (j.contains("pool_node")) spec.pool_node = j.at("pool_node").get<int>();
    spec.peak_usage_bytes = j.value("peak_usage_bytes", spec.peak_usage_bytes);
    spec.lock_headroom_bytes = j.value("lock_headroom_bytes", spec.lock_headroom_bytes);
    spec.period_s = j.value("period_s", spec.period_s);
    if (j.contains("thresholds")) {
      spec.thresholds.t1 = j.at("thresholds").value("t1", spec.thresholds.t1);
      spec.thresholds.t2 = j.at("thresholds").value("t2", spec.thresholds.t2);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("experiment spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

std::string experiment_spec_to_json(const ExperimentSpec& spec) {
  json co = json::array();
  for (const auto& c : spec.co_runners) co.push_back(command_to_json(c));
  json j = {{"workload", command_to_json(spec.workload)},
            {"sweep",
             {{"kind", to_string(spec.sweep)},
              {"fractions", spec.fractions},
              {"max_links", spec.max_links},
              {"local_in_interleave", spec.local_in_interleave},
              {"link_nodes", spec.link_nodes},
              {"hosts", spec.hosts},
              {"same_mix", spec.same_mix},
              {"pooled_fraction", spec.sharing_pooled_fraction},
              {"co_runners", co}}},
            {"repetitions", spec.repetitions},
            {"output_dir", spec.output_dir.string()},
            {"local_node", spec.local_node},
            {"peak_usage_bytes", spec.peak_usage_bytes},
            {"lock_headroom_bytes", spec.lock_headroom_bytes},
            {"period_s", spec.period_s},
            {"thresholds", {{"t1", spec.thresholds.t1}, {"t2", spec.thresholds.t2}}}};
  if (spec.pool_node) j["pool_node"] = *spec.pool_node;
  return j.dump(2);
}

std::optional<int> default_pool_node(const Topology& topo, int local_node) {
  for (int id : topo.node_ids()) {
    if (id != local_node) return id;
  }
  return std::nullopt;
}

Composition sweep_composition(double fraction, int local_node, std::optional<int> pool_node,
                              std::uint64_t peak_usage_bytes, std::uint64_t headroom) {
  Composition c;
  if (fraction <= 0.0) {
    c = local_only(local_node);
  } else if (!pool_node) {
    throw Error(Errc::CompositionUnsatisfiable,
                "no pool node: the host has a single NUMA node");
  } else if (fraction >= 1.0) {
    c = remote_only(local_node, *pool_node);
  } else {
    c = capacity_split(local_node, *pool_node, fraction, peak_usage_bytes);
  }
  c.lock_headroom_bytes = headroom;
  return c;
}

// ---- SystemRunner ----

SystemRunner::SystemRunner(SamplingPlan plan, Topology topo)
    : plan_(std::move(plan)), topo_(std::move(topo)) {
  validate(plan_);
}

RunOutcome SystemRunner::run(const Command& command, const Composition& c) {
  ActiveComposition active = apply_composition(c, topo_);
  Profile p = run_profiled(command, plan_, &active);
  RunOutcome out;
  out.seconds = p.wall_time_s;
  out.exit_status = p.exit_status;
  out.crashed = p.crashed;
  out.profile = std::move(p);
  return out;
}

std::vector<RunOutcome> SystemRunner::run_together(std::span<const Command> commands,
                                                   std::span<const Composition> compositions) {
  if (commands.size() != compositions.size() || commands.empty()) {
    throw Error(Errc::InvalidArgument, "run_together needs one composition per command");
  }
  // Arm everything up front: a failure here must not strand the others at
  // the start barrier.
  std::vector<ActiveComposition> armed;
  for (const auto& c : compositions) armed.push_back(apply_composition(c, topo_));

  const std::size_t n = commands.size();
  std::latch gate(static_cast<std::ptrdiff_t>(n));
  std::stop_source stop_co_runners;
  std::vector<RunOutcome> outcomes(n);
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> threads;
    for (std::size_t i = 0; i < n; ++i) {
      threads.emplace_back([&, i] {
        SupervisorOptions options;
        options.policy = armed[i].launch_policy();
        options.start_gate = &gate;
        if (i > 0) {
          options.stop = stop_co_runners.get_token();
          options.forward_fd = -1;
        }
        try {
          auto profiles = supervise_job(commands.subspan(i, 1), plan_, options);
          if (!profiles.empty()) {
            outcomes[i].seconds = profiles.front().wall_time_s;
            outcomes[i].exit_status = profiles.front().exit_status;
            outcomes[i].crashed = profiles.front().crashed;
            outcomes[i].profile = std::move(profiles.front());
          }
        } catch (...) {
          errors[i] = std::current_exception();
        }
        if (i == 0) stop_co_runners.request_stop();
      });
    }
  }
  if (errors[0]) std::rethrow_exception(errors[0]);
  for (std::size_t i = 1; i < n; ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        warn("co-runner " + std::to_string(i) + " failed: " + e.what());
      }
    }
  }
  return outcomes;
}

// ---- orchestration ----

bool CapacitySweepResult::any_failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const FractionRun& r) { return r.failed; });
}

bool LinkScalingResult::any_failed() const {
  return std::any_of(runs.begin(), runs.end(), [](const LinkRun& r) { return r.failed; });
}

bool SharingResult::any_failed() const {
  return std::any_of(configs.begin(), configs.end(),
                     [](const SharingConfig& c) { return c.failed; });
}

CapacitySweepResult sweep_capacity(const ExperimentSpec& spec, WorkloadRunner& runner,
                                   const RunSink& sink) {
  validate(spec);
  const Topology& topo = runner.topology();
  std::optional<int> pool = spec.pool_node ? spec.pool_node : default_pool_node(topo, spec.local_node);

  CapacitySweepResult result;
  result.peak_usage_bytes = spec.peak_usage_bytes;
  bool needs_peak = std::any_of(spec.fractions.begin(), spec.fractions.end(),
                                [](double f) { return f > 0.0 && f < 1.0; });
  if (needs_peak && result.peak_usage_bytes == 0) {
    RunOutcome calibration = runner.run(spec.workload, local_only(spec.local_node));
    if (sink) sink("calibration", calibration);
    if (!calibration.ok()) {
      throw Error(Errc::WorkloadFailed, "calibration run failed: " + failure_reason(calibration));
    }
    result.peak_usage_bytes = calibration.profile ? peak_bytes(*calibration.profile) : 0;
    result.calibrated = true;
  }

  for (double f : spec.fractions) {
    FractionRun run;
    run.fraction = f;
    try {
      run.composition = sweep_composition(f, spec.local_node, pool, result.peak_usage_bytes,
                                          spec.lock_headroom_bytes);
      check_satisfiable(run.composition, topo);
      for (int rep = 1; rep <= spec.repetitions; ++rep) {
        RunOutcome o = runner.run(spec.workload, run.composition);
        if (sink) sink(fraction_label(f) + "-rep" + std::to_string(rep), o);
        if (!o.ok()) {
          run.failed = true;
          run.reason = failure_reason(o);
          break;
        }
        run.seconds.push_back(o.seconds);
      }
    } catch (const Error& e) {
      if (!composition_error(e)) throw;
      run.skipped = true;
      run.reason = e.what();
    }
    if (!run.skipped && !run.failed) run.median_seconds = median(run.seconds);
    result.runs.push_back(std::move(run));
  }

  std::optional<double> baseline;
  std::map<double, double> timed;
  for (const auto& r : result.runs) {
    if (!r.median_seconds) continue;
    if (r.fraction == 0.0) baseline = *r.median_seconds;
    timed[r.fraction] = *r.median_seconds;
  }
  try {
    if (!baseline) throw Error(Errc::MissingBaseline, "the LocalOnly baseline did not run");
    result.report = classify(*baseline, timed, spec.thresholds);
  } catch (const Error& e) {
    if (e.code() != Errc::MissingBaseline && e.code() != Errc::Missing75) throw;
    result.unclassified_reason = std::string(to_string(e.code())) + ": " + e.what();
  }
  return result;
}

LinkScalingResult scale_links(const ExperimentSpec& spec, WorkloadRunner& runner,
                              const RunSink& sink) {
  validate(spec);
  const Topology& topo = runner.topology();
  std::vector<int> candidates = spec.link_nodes;
  if (candidates.empty()) {
    for (int id : topo.node_ids()) {
      if (id != spec.local_node) candidates.push_back(id);
    }
  }
  if (static_cast<std::size_t>(spec.max_links) > candidates.size()) {
    throw Error(Errc::CompositionUnsatisfiable,
                std::to_string(spec.max_links) + " link(s) need as many pool nodes; the host has " +
                    std::to_string(candidates.size()));
  }

  LinkScalingResult result;
  for (int links = 0; links <= spec.max_links; ++links) {
    LinkRun run;
    run.links = links;
    run.composition =
        links == 0 ? local_only(spec.local_node)
                   : bandwidth_interleave(spec.local_node,
                                          std::vector<int>(candidates.begin(), candidates.begin() + links),
                                          spec.local_in_interleave);
    check_satisfiable(run.composition, topo);
    for (int rep = 1; rep <= spec.repetitions; ++rep) {
      RunOutcome o = runner.run(spec.workload, run.composition);
      if (sink) sink("links" + std::to_string(links) + "-rep" + std::to_string(rep), o);
      if (!o.ok()) {
        run.failed = true;
        run.reason = failure_reason(o);
        break;
      }
      run.seconds.push_back(o.seconds);
    }
    if (!run.failed) run.median_seconds = median(run.seconds);
    result.runs.push_back(std::move(run));
  }
  const auto& base = result.runs.front();
  for (auto& r : result.runs) {
    if (base.median_seconds && r.median_seconds && *r.median_seconds > 0.0) {
      r.speedup = *base.median_seconds / *r.median_seconds;
    }
  }
  return result;
}

SharingResult run_sharing(const ExperimentSpec& spec, WorkloadRunner& runner,
                          const RunSink& sink) {
  validate(spec);
  const Topology& topo = runner.topology();
  SharingResult result;
  std::optional<int> pool = spec.pool_node ? spec.pool_node : default_pool_node(topo, spec.local_node);
  if (!pool) {
    throw Error(Errc::CompositionUnsatisfiable, "no pool node: the host has a single NUMA node");
  }
  result.pool_node = *pool;

  auto plan = [&](int hosts) {
    std::vector<SharedHostPolicy> per_host;
    if (spec.sharing_pooled_fraction > 0.0) {
      std::uint64_t peak = spec.peak_usage_bytes;
      per_host.assign(static_cast<std::size_t>(hosts),
                      SharedHostPolicy{spec.sharing_pooled_fraction, peak});
    }
    auto comps = plan_sharing(hosts, *pool, per_host, topo);
    for (auto& c : comps) c.lock_headroom_bytes = spec.lock_headroom_bytes;
    return comps;
  };

  struct Mix {
    std::string label;
    std::vector<Command> co_runners;
  };
  std::vector<Mix> mixes{{"private", {}}};
  const int k = spec.hosts;
  if (k > 1 && (spec.same_mix || spec.co_runners.empty())) {
    mixes.push_back({"same", std::vector<Command>(static_cast<std::size_t>(k - 1), spec.workload)});
  }
  if (k > 1 && !spec.co_runners.empty()) {
    Mix other{"other", {}};
    for (int i = 0; i < k - 1; ++i) {
      other.co_runners.push_back(spec.co_runners[static_cast<std::size_t>(i) % spec.co_runners.size()]);
    }
    mixes.push_back(std::move(other));
  }

  for (const auto& mix : mixes) {
    SharingConfig config;
    config.label = mix.label;
    config.co_runners = static_cast<int>(mix.co_runners.size());
    config.compositions = plan(config.co_runners + 1);
    std::vector<Command> commands{spec.workload};
    commands.insert(commands.end(), mix.co_runners.begin(), mix.co_runners.end());

    for (int rep = 1; rep <= spec.repetitions; ++rep) {
      RunOutcome subject;
      if (commands.size() == 1) {
        subject = runner.run(commands.front(), config.compositions.front());
      } else {
        subject = runner.run_together(commands, config.compositions).front();
      }
      if (sink) sink(mix.label + "-rep" + std::to_string(rep), subject);
      if (!subject.ok()) {
        config.failed = true;
        config.reason = failure_reason(subject);
        break;
      }
      config.seconds.push_back(subject.seconds);
    }
    if (!config.seconds.empty()) {
      config.mean_seconds = std::accumulate(config.seconds.begin(), config.seconds.end(), 0.0) /
                            static_cast<double>(config.seconds.size());
      auto [lo, hi] = std::minmax_element(config.seconds.begin(), config.seconds.end());
      config.min_seconds = *lo;
      config.max_seconds = *hi;
    }
    result.configs.push_back(std::move(config));
  }
  const auto& priv = result.configs.front();
  for (auto& c : result.configs) {
    if (!priv.failed && !c.failed && priv.mean_seconds > 0.0) {
      c.slowdown_vs_private = c.mean_seconds / priv.mean_seconds - 1.0;
    }
  }
  return result;
}

}  // namespace cxlmem
