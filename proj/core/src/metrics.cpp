#include "cxlmem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cxlmem/error.hpp"

namespace cxlmem {
namespace {

constexpr double kFractionKeyTolerance = 1e-9;

double seconds(std::int64_t ns) { return static_cast<double>(ns) / 1e9; }

const PhaseMark* find_mark(const Profile& p, PhaseLabel label) {
  for (const auto& m : p.phase_marks) {
    if (m.label == label) return &m;
  }
  return nullptr;
}

const Sample* sample_at(const Profile& p, std::int64_t ts) {
  for (const auto& s : p.samples) {
    if (s.snapshot.timestamp_ns == ts) return &s;
  }
  return nullptr;
}

std::uint64_t basis_value(const procfs::MemSnapshot& s, AggregateBasis basis) {
  return basis == AggregateBasis::Rss ? s.rss_kib : s.pss_kib;
}

}  // namespace

std::string_view to_string(ColdBasis basis) {
  return basis == ColdBasis::FinalRss ? "final_rss" : "peak_rss";
}

std::string_view to_string(AggregateBasis basis) {
  return basis == AggregateBasis::Rss ? "rss" : "pss";
}

AggregateBasis aggregate_basis_from_string(std::string_view name) {
  if (name == "rss") return AggregateBasis::Rss;
  if (name == "pss") return AggregateBasis::Pss;
  throw Error(Errc::InvalidArgument, "unknown aggregation basis '" + std::string(name) + "'");
}

std::string_view to_string(SensitivityClass c) {
  switch (c) {
    case SensitivityClass::I: return "I";
    case SensitivityClass::II: return "II";
    case SensitivityClass::III: return "III";
  }
  return "?";
}

DerivedMetrics derive(const Profile& profile, const DeriveOptions& options) {
  std::vector<const Sample*> valid;
  for (const auto& s : profile.samples) {
    if (s.has_address_space) valid.push_back(&s);
  }
  if (valid.size() < 2) {
    throw Error(Errc::InvalidArgument, "derive needs at least two samples with an address space");
  }

  DerivedMetrics m;
  m.aggregate_basis = profile.basis;
  m.cold_basis = options.cold_basis;

  for (const Sample* s : valid) m.peak_rss_kib = std::max(m.peak_rss_kib, s->snapshot.rss_kib);
  for (const Sample* s : valid) {
    double ratio = m.peak_rss_kib == 0
                       ? 0.0
                       : static_cast<double>(s->snapshot.rss_kib) /
                             static_cast<double>(m.peak_rss_kib);
    m.capacity_curve.push_back({seconds(s->snapshot.timestamp_ns), ratio});
  }

  const PhaseMark* init_end = find_mark(profile, PhaseLabel::InitEnd);
  const PhaseMark* compute_end = find_mark(profile, PhaseLabel::ComputeEnd);
  bool phased = init_end != nullptr && compute_end != nullptr &&
                init_end->timestamp_ns < compute_end->timestamp_ns;

  double touched_sum = 0.0;
  std::size_t touched_n = 0;
  double bandwidth_sum = 0.0;
  for (std::size_t i = 1; i < valid.size(); ++i) {
    const auto& a = *valid[i - 1];
    const auto& b = *valid[i];
    double dt = seconds(b.snapshot.timestamp_ns - a.snapshot.timestamp_ns);
    if (dt <= 0.0) continue;
    std::uint64_t touched_kib =
        a.cleared ? b.snapshot.referenced_kib
                  : (b.snapshot.referenced_kib > a.snapshot.referenced_kib
                         ? b.snapshot.referenced_kib - a.snapshot.referenced_kib
                         : 0);
    double t = seconds(b.snapshot.timestamp_ns);
    double bw = static_cast<double>(touched_kib) * 1024.0 / dt;
    m.touch_series.push_back({t, static_cast<double>(touched_kib)});
    m.est_bandwidth_series.push_back({t, bw});
    bandwidth_sum += bw;

    bool in_compute = !phased || (a.snapshot.timestamp_ns >= init_end->timestamp_ns &&
                                  b.snapshot.timestamp_ns <= compute_end->timestamp_ns);
    if (in_compute && b.snapshot.rss_kib > 0) {
      touched_sum += static_cast<double>(touched_kib) / static_cast<double>(b.snapshot.rss_kib);
      ++touched_n;
    }
  }
  if (!m.est_bandwidth_series.empty()) {
    m.mean_est_bandwidth = bandwidth_sum / static_cast<double>(m.est_bandwidth_series.size());
  }
  if (touched_n > 0) m.mean_touched_fraction = touched_sum / static_cast<double>(touched_n);

  if (!phased) {
    m.warnings.push_back("MissingPhaseMarks: init_end/compute_end absent; cold_fraction omitted");
    return m;
  }
  const Sample* start = sample_at(profile, init_end->timestamp_ns);
  const Sample* end = sample_at(profile, compute_end->timestamp_ns);
  if (start == nullptr || end == nullptr || !start->cleared || !end->has_address_space) {
    m.warnings.push_back("phase marks lack cleared samples; cold_fraction omitted");
    return m;
  }
  for (const auto& s : profile.samples) {
    if (s.cleared && s.snapshot.timestamp_ns > init_end->timestamp_ns &&
        s.snapshot.timestamp_ns < compute_end->timestamp_ns) {
      m.warnings.push_back("referenced state was reset inside the compute phase; cold_fraction omitted");
      return m;
    }
  }

  double rss_end = static_cast<double>(end->snapshot.rss_kib);
  double referenced = std::min(static_cast<double>(end->snapshot.referenced_kib), rss_end);
  double denominator =
      options.cold_basis == ColdBasis::FinalRss ? rss_end : static_cast<double>(m.peak_rss_kib);
  if (denominator <= 0.0) {
    m.warnings.push_back("zero RSS at compute_end; cold_fraction omitted");
    return m;
  }
  m.cold_fraction = std::clamp((rss_end - referenced) / denominator, 0.0, 1.0);
  m.compute_touched_fraction = std::clamp(referenced / denominator, 0.0, 1.0);
  return m;
}

Profile aggregate(std::span<const Profile> profiles, AggregateBasis basis) {
  if (profiles.empty()) throw Error(Errc::EmptyInput, "nothing to aggregate");

  auto valid_count = [](const Profile& p) {
    return std::count_if(p.samples.begin(), p.samples.end(),
                         [](const Sample& s) { return s.has_address_space; });
  };
  std::size_t ref_index = 0;
  for (std::size_t i = 1; i < profiles.size(); ++i) {
    if (valid_count(profiles[i]) > valid_count(profiles[ref_index])) ref_index = i;
  }
  const Profile& ref = profiles[ref_index];

  std::int64_t start = std::numeric_limits<std::int64_t>::max();
  double period = 0.0;
  for (const auto& p : profiles) {
    start = std::min(start, p.start_monotonic_ns);
    period = std::max(period, p.period_s);
  }
  auto tolerance = static_cast<std::int64_t>(std::llround(period * 1e9));

  Profile out;
  out.command = ref.command;
  out.rank = ref.rank;
  out.mode = ref.mode;
  out.period_s = ref.period_s;
  out.start_monotonic_ns = start;
  out.basis = std::string(to_string(basis));
  for (const auto& p : profiles) {
    out.pids.insert(out.pids.end(), p.pids.begin(), p.pids.end());
    out.warnings.insert(out.warnings.end(), p.warnings.begin(), p.warnings.end());
    out.wall_time_s =
        std::max(out.wall_time_s, seconds(p.start_monotonic_ns - start) + p.wall_time_s);
    if (out.exit_status == 0) out.exit_status = p.exit_status;
    out.crashed = out.crashed || p.crashed;
    if (out.term_signal == 0) out.term_signal = p.term_signal;
  }

  std::int64_t shift = ref.start_monotonic_ns - start;
  for (const auto& rs : ref.samples) {
    Sample agg;
    agg.trigger = rs.trigger;
    agg.cleared = rs.cleared;
    agg.has_address_space = rs.has_address_space;
    agg.snapshot.timestamp_ns = rs.snapshot.timestamp_ns + shift;
    if (rs.has_address_space) {
      std::int64_t abs_t = ref.start_monotonic_ns + rs.snapshot.timestamp_ns;
      for (std::size_t i = 0; i < profiles.size(); ++i) {
        const Sample* nearest = nullptr;
        if (i == ref_index) {
          nearest = &rs;
        } else {
          std::int64_t best = tolerance + 1;
          for (const auto& s : profiles[i].samples) {
            if (!s.has_address_space) continue;
            std::int64_t d =
                std::llabs(profiles[i].start_monotonic_ns + s.snapshot.timestamp_ns - abs_t);
            if (d < best) {
              best = d;
              nearest = &s;
            }
          }
        }
        if (nearest == nullptr) continue;
        const auto& snap = nearest->snapshot;
        agg.snapshot.rss_kib += basis_value(snap, basis);
        agg.snapshot.pss_kib += snap.pss_kib;
        agg.snapshot.referenced_kib += snap.referenced_kib;
        agg.snapshot.swap_kib += snap.swap_kib;
        for (const auto& [node, pages] : snap.node_pages) agg.snapshot.node_pages[node] += pages;
      }
    }
    out.samples.push_back(std::move(agg));
  }
  for (const auto& mark : ref.phase_marks) {
    out.phase_marks.push_back({mark.timestamp_ns + shift, mark.label});
  }
  return out;
}

SensitivityReport classify(double baseline_seconds, const std::map<double, double>& timed_runs,
                           Thresholds thresholds) {
  if (!(baseline_seconds > 0.0)) {
    throw Error(Errc::MissingBaseline, "classification needs a positive baseline time");
  }
  if (!(thresholds.t1 >= 0.0 && thresholds.t1 <= thresholds.t2)) {
    throw Error(Errc::InvalidArgument, "thresholds must satisfy 0 <= t1 <= t2");
  }
  SensitivityReport report;
  report.baseline_seconds = baseline_seconds;
  report.thresholds = thresholds;

  std::optional<double> at75;
  for (const auto& [fraction, time] : timed_runs) {
    double slowdown = std::max(0.0, time / baseline_seconds - 1.0);
    report.slowdown_by_fraction[fraction] = slowdown;
    if (std::abs(fraction - 0.75) < kFractionKeyTolerance) at75 = slowdown;
  }
  if (!at75) throw Error(Errc::Missing75, "no timed run at 75% pooled memory");

  if (*at75 < thresholds.t1) report.sensitivity = SensitivityClass::I;
  else if (*at75 <= thresholds.t2) report.sensitivity = SensitivityClass::II;
  else report.sensitivity = SensitivityClass::III;
  return report;
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(Errc::EmptyInput, "median of no values");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace cxlmem
