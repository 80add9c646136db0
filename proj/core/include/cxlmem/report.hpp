#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cxlmem/experiment.hpp"
#include "cxlmem/metrics.hpp"
#include "cxlmem/probes.hpp"
#include "cxlmem/supervisor.hpp"
#include "cxlmem/topology.hpp"

namespace cxlmem {

inline constexpr std::string_view kMetricsFormat = "cxlmem.metrics";
inline constexpr std::string_view kSweepFormat = "cxlmem.sweep";
inline constexpr std::string_view kScalingFormat = "cxlmem.link_scaling";
inline constexpr std::string_view kSharingFormat = "cxlmem.sharing";
inline constexpr std::string_view kProbeFormat = "cxlmem.probe";

// Documents. Every JSON document records the machine it was produced on.
std::string metrics_json(const DerivedMetrics& m, const Profile& source, const Topology& machine);
/// One row per sample: t_s, capacity, touched_kib, est_bandwidth_bytes_per_s.
std::string metrics_csv(const DerivedMetrics& m);

std::string sweep_json(const CapacitySweepResult& r, const ExperimentSpec& spec,
                       const Topology& machine);
std::string sweep_csv(const CapacitySweepResult& r);
std::string scaling_json(const LinkScalingResult& r, const ExperimentSpec& spec,
                         const Topology& machine);
std::string scaling_csv(const LinkScalingResult& r);
std::string sharing_json(const SharingResult& r, const ExperimentSpec& spec,
                         const Topology& machine);
std::string sharing_csv(const SharingResult& r);

/// A single-line JSON object, suitable for appending to a results file.
std::string probe_json_line(const ProbeResult& r, const Topology& machine);

// Charts.
struct ChartSeries {
  std::string name;
  std::vector<SeriesPoint> points;
};

struct Bar {
  std::string label;
  double value = 0.0;
  std::optional<double> low;   // whisker ends
  std::optional<double> high;
};

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, std::span<const ChartSeries> series,
                           std::optional<std::pair<double, double>> y_range = std::nullopt);
std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          std::span<const Bar> bars);

struct ReportFile {
  std::string name;
  std::string contents;
};

struct RenderedReport {
  std::vector<ReportFile> files;
  std::string summary;
};

/// Recognizes profiles (JSON lines), sweep, scaling, sharing and metrics
/// documents and renders CSV tables plus SVG charts for each. Throws
/// EmptyInput for no inputs and ParseError for unrecognized files.
RenderedReport render_report(std::span<const std::filesystem::path> inputs);

}  // namespace cxlmem
