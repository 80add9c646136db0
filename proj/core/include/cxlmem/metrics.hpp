#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxlmem/supervisor.hpp"

namespace cxlmem {

struct SeriesPoint {
  double t_s = 0.0;
  double value = 0.0;

  bool operator==(const SeriesPoint&) const = default;
};

// Denominator of the cold-page fraction.
enum class ColdBasis { FinalRss, PeakRss };
std::string_view to_string(ColdBasis basis);

enum class AggregateBasis { Rss, Pss };
std::string_view to_string(AggregateBasis basis);
AggregateBasis aggregate_basis_from_string(std::string_view name);

struct DerivedMetrics {
  std::uint64_t peak_rss_kib = 0;
  // (t, rss / peak) for every sample that still had an address space.
  std::vector<SeriesPoint> capacity_curve;
  // Pages resident at compute_end but never referenced after init_end.
  // Absent when the profile lacks the two phase marks.
  std::optional<double> cold_fraction;
  std::optional<double> compute_touched_fraction;
  // Referenced KiB per interval, stamped at the interval's end.
  std::vector<SeriesPoint> touch_series;
  // Bytes per second: referenced pages per interval at full page size. A
  // lower bound, since a page counts once however often it was touched.
  std::vector<SeriesPoint> est_bandwidth_series;
  double mean_est_bandwidth = 0.0;
  // Mean of referenced / rss over the measured intervals (restricted to the
  // compute phase when phase marks are present).
  double mean_touched_fraction = 0.0;
  std::string aggregate_basis = "rss";
  ColdBasis cold_basis = ColdBasis::FinalRss;
  std::vector<std::string> warnings;
};

struct DeriveOptions {
  ColdBasis cold_basis = ColdBasis::FinalRss;
};

/// Pure function of the profile. Throws InvalidArgument when the profile has
/// fewer than two samples with an address space.
DerivedMetrics derive(const Profile& profile, const DeriveOptions& options = {});

/// Sums several time-aligned profiles into one job profile. The profile
/// with the most samples provides the time grid; the others contribute
/// their nearest sample within one sampling period. Throws EmptyInput.
Profile aggregate(std::span<const Profile> profiles, AggregateBasis basis);

struct Thresholds {
  double t1 = 0.05;
  double t2 = 0.20;
};

enum class SensitivityClass { I, II, III };
std::string_view to_string(SensitivityClass c);

struct SensitivityReport {
  double baseline_seconds = 0.0;
  std::map<double, double> slowdown_by_fraction;
  SensitivityClass sensitivity = SensitivityClass::I;
  Thresholds thresholds;
};

/// slowdown(f) = time(f) / baseline - 1 (floored at 0); the class is decided
/// by the slowdown at 75% pooled memory alone.
SensitivityReport classify(double baseline_seconds, const std::map<double, double>& timed_runs,
                           Thresholds thresholds = {});

/// Median; the mean of the middle two for even sizes. Throws EmptyInput.
double median(std::vector<double> values);

}  // namespace cxlmem
