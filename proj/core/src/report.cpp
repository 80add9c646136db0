#include "cxlmem/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cxlmem/error.hpp"
#include "cxlmem/profile_io.hpp"
#include "json_support.hpp"

namespace cxlmem {

using nlohmann::json;

namespace {

constexpr int kReportVersion = 1;
constexpr double kWidth = 720, kHeight = 400;
constexpr double kLeft = 80, kRight = 160, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

constexpr std::string_view kEstimatorNote =
    "est_bandwidth counts each referenced page once per interval at full page size; "
    "it is a lower bound on memory traffic";

template <typename T>
json nullable(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

std::string csv_opt(const std::optional<double>& v) { return v ? num(*v) : ""; }

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json series_json(const std::vector<SeriesPoint>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({p.t_s, p.value});
  return a;
}

json document(std::string_view format, const Topology& machine) {
  return {{"format", format}, {"version", kReportVersion},
          {"machine", detail::to_json_value(machine)}};
}

std::string status_of(bool skipped, bool failed) {
  return skipped ? "skipped" : failed ? "failed" : "ok";
}

// Linear ticks: five intervals spanning [lo, hi].
std::vector<double> ticks(double lo, double hi) {
  std::vector<double> t;
  for (int i = 0; i <= 5; ++i) t.push_back(lo + (hi - lo) * i / 5.0);
  return t;
}

void chart_frame(std::ostringstream& svg, const std::string& title, const std::string& x_label,
                 const std::string& y_label, double x0, double x1, double y0, double y1,
                 bool x_ticks) {
  double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << xml_escape(title) << "</text>\n"
      << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (double v : ticks(y0, y1)) {
    double y = kTop + ph - (v - y0) / (y1 - y0) * ph;
    svg << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << y << "\" x2=\"" << kLeft + pw
        << "\" y2=\"" << y << "\" stroke=\"#ddd\"/>\n"
        << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(v)
        << "</text>\n";
  }
  if (x_ticks) {
    for (double v : ticks(x0, x1)) {
      double x = kLeft + (v - x0) / (x1 - x0) * pw;
      svg << "<text x=\"" << x << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
          << num(v) << "</text>\n";
    }
  }
  svg << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 14
      << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n"
      << "<text x=\"18\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << kTop + ph / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
}

std::string stem_of(const std::filesystem::path& p) {
  std::string s = p.filename().string();
  for (std::string_view ext : {".jsonl", ".json"}) {
    if (s.size() > ext.size() && s.compare(s.size() - ext.size(), ext.size(), ext) == 0) {
      return s.substr(0, s.size() - ext.size());
    }
  }
  return s;
}

bool looks_like_profile(const std::string& text) {
  auto nl = text.find('\n');
  std::string first = text.substr(0, nl);
  try {
    json j = json::parse(first);
    return j.is_object() && j.value("format", std::string()) == kProfileFormat;
  } catch (const json::exception&) {
    return false;
  }
}

}  // namespace

// ---- documents ----

std::string metrics_json(const DerivedMetrics& m, const Profile& source, const Topology& machine) {
  json j = document(kMetricsFormat, machine);
  j["source"] = {{"pids", source.pids},     {"command", source.command},
                 {"rank", source.rank},     {"mode", to_string(source.mode)},
                 {"period_s", source.period_s}};
  j["peak_rss_kib"] = m.peak_rss_kib;
  j["cold_fraction"] = nullable(m.cold_fraction);
  j["compute_touched_fraction"] = nullable(m.compute_touched_fraction);
  j["mean_touched_fraction"] = m.mean_touched_fraction;
  j["mean_est_bandwidth_bytes_per_s"] = m.mean_est_bandwidth;
  j["cold_basis"] = to_string(m.cold_basis);
  j["aggregate_basis"] = m.aggregate_basis;
  j["estimator_note"] = kEstimatorNote;
  j["capacity_curve"] = series_json(m.capacity_curve);
  j["touch_series_kib"] = series_json(m.touch_series);
  j["est_bandwidth_series"] = series_json(m.est_bandwidth_series);
  j["warnings"] = m.warnings;
  return j.dump(2) + "\n";
}

std::string metrics_csv(const DerivedMetrics& m) {
  std::ostringstream out;
  out << "t_s,capacity,touched_kib,est_bandwidth_bytes_per_s\n";
  std::size_t k = 0;
  for (const auto& p : m.capacity_curve) {
    out << num(p.t_s) << ',' << num(p.value) << ',';
    while (k < m.touch_series.size() && m.touch_series[k].t_s < p.t_s) ++k;
    if (k < m.touch_series.size() && m.touch_series[k].t_s == p.t_s) {
      out << num(m.touch_series[k].value) << ',' << num(m.est_bandwidth_series[k].value);
    } else {
      out << ',';
    }
    out << '\n';
  }
  return out.str();
}

std::string sweep_json(const CapacitySweepResult& r, const ExperimentSpec& spec,
                       const Topology& machine) {
  json j = document(kSweepFormat, machine);
  j["experiment"] = json::parse(experiment_spec_to_json(spec));
  j["peak_usage_bytes"] = r.peak_usage_bytes;
  j["calibrated"] = r.calibrated;
  json runs = json::array();
  for (const auto& run : r.runs) {
    std::optional<double> slowdown;
    if (r.report) {
      auto it = r.report->slowdown_by_fraction.find(run.fraction);
      if (it != r.report->slowdown_by_fraction.end()) slowdown = it->second;
    }
    runs.push_back({{"fraction", run.fraction},
                    {"composition", detail::to_json_value(run.composition)},
                    {"seconds", run.seconds},
                    {"median_seconds", nullable(run.median_seconds)},
                    {"slowdown", nullable(slowdown)},
                    {"status", status_of(run.skipped, run.failed)},
                    {"reason", run.reason}});
  }
  j["runs"] = runs;
  if (r.report) {
    json slow = json::array();
    for (const auto& [f, s] : r.report->slowdown_by_fraction) {
      slow.push_back({{"fraction", f}, {"slowdown", s}});
    }
    j["report"] = {{"baseline_seconds", r.report->baseline_seconds},
                   {"slowdown_by_fraction", slow},
                   {"class", to_string(r.report->sensitivity)},
                   {"thresholds", {{"t1", r.report->thresholds.t1}, {"t2", r.report->thresholds.t2}}}};
  } else {
    j["report"] = nullptr;
  }
  j["unclassified_reason"] = r.unclassified_reason;
  return j.dump(2) + "\n";
}

std::string sweep_csv(const CapacitySweepResult& r) {
  std::ostringstream out;
  out << "fraction,status,median_seconds,slowdown,class\n";
  std::string cls = r.report ? std::string(to_string(r.report->sensitivity)) : "";
  for (const auto& run : r.runs) {
    std::optional<double> slowdown;
    if (r.report) {
      auto it = r.report->slowdown_by_fraction.find(run.fraction);
      if (it != r.report->slowdown_by_fraction.end()) slowdown = it->second;
    }
    out << num(run.fraction) << ',' << status_of(run.skipped, run.failed) << ','
        << csv_opt(run.median_seconds) << ',' << csv_opt(slowdown) << ',' << cls << '\n';
  }
  return out.str();
}

std::string scaling_json(const LinkScalingResult& r, const ExperimentSpec& spec,
                         const Topology& machine) {
  json j = document(kScalingFormat, machine);
  j["experiment"] = json::parse(experiment_spec_to_json(spec));
  json runs = json::array();
  for (const auto& run : r.runs) {
    runs.push_back({{"links", run.links},
                    {"composition", detail::to_json_value(run.composition)},
                    {"seconds", run.seconds},
                    {"median_seconds", nullable(run.median_seconds)},
                    {"speedup", nullable(run.speedup)},
                    {"status", status_of(false, run.failed)},
                    {"reason", run.reason}});
  }
  j["runs"] = runs;
  return j.dump(2) + "\n";
}

std::string scaling_csv(const LinkScalingResult& r) {
  std::ostringstream out;
  out << "links,status,median_seconds,speedup\n";
  for (const auto& run : r.runs) {
    out << run.links << ',' << status_of(false, run.failed) << ',' << csv_opt(run.median_seconds)
        << ',' << csv_opt(run.speedup) << '\n';
  }
  return out.str();
}

std::string sharing_json(const SharingResult& r, const ExperimentSpec& spec,
                         const Topology& machine) {
  json j = document(kSharingFormat, machine);
  j["experiment"] = json::parse(experiment_spec_to_json(spec));
  j["pool_node"] = r.pool_node;
  json configs = json::array();
  for (const auto& c : r.configs) {
    json comps = json::array();
    for (const auto& comp : c.compositions) comps.push_back(detail::to_json_value(comp));
    configs.push_back({{"label", c.label},
                       {"co_runners", c.co_runners},
                       {"compositions", comps},
                       {"seconds", c.seconds},
                       {"mean_seconds", c.mean_seconds},
                       {"min_seconds", c.min_seconds},
                       {"max_seconds", c.max_seconds},
                       {"slowdown_vs_private", nullable(c.slowdown_vs_private)},
                       {"status", status_of(false, c.failed)},
                       {"reason", c.reason}});
  }
  j["configs"] = configs;
  return j.dump(2) + "\n";
}

std::string sharing_csv(const SharingResult& r) {
  std::ostringstream out;
  out << "config,co_runners,status,mean_seconds,min_seconds,max_seconds,slowdown_vs_private\n";
  for (const auto& c : r.configs) {
    out << csv_field(c.label) << ',' << c.co_runners << ',' << status_of(false, c.failed) << ','
        << num(c.mean_seconds) << ',' << num(c.min_seconds) << ',' << num(c.max_seconds) << ','
        << csv_opt(c.slowdown_vs_private) << '\n';
  }
  return out.str();
}

std::string probe_json_line(const ProbeResult& r, const Topology& machine) {
  json j = document(kProbeFormat, machine);
  json placement = json::object();
  for (const auto& [node, pages] : r.placement) placement[std::to_string(node)] = pages;
  j["kind"] = to_string(r.kind);
  j["composition"] = r.composition;
  j["value"] = r.value;
  j["unit"] = r.kind == ProbeKind::Triad ? "GB/s" : "ns/load";
  j["repetitions"] = r.repetitions;
  j["working_set_bytes"] = r.working_set_bytes;
  j["threads"] = r.threads;
  j["seed"] = r.seed;
  j["placement_pages"] = placement;
  j["valid"] = r.valid;
  j["note"] = r.note;
  return j.dump() + "\n";
}

// ---- charts ----

std::string svg_line_chart(const std::string& title, const std::string& x_label,
                           const std::string& y_label, std::span<const ChartSeries> series,
                           std::optional<std::pair<double, double>> y_range) {
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0;
  double y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      x0 = std::min(x0, p.t_s);
      x1 = std::max(x1, p.t_s);
      y0 = std::min(y0, p.value);
      y1 = std::max(y1, p.value);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (y_range) std::tie(y0, y1) = *y_range;
  else y0 = std::min(0.0, y0);
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;

  double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  std::ostringstream svg;
  chart_frame(svg, title, x_label, y_label, x0, x1, y0, y1, true);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : series[i].points) {
      double v = std::clamp(p.value, y0, y1);
      svg << kLeft + (p.t_s - x0) / (x1 - x0) * pw << ',' << kTop + ph - (v - y0) / (y1 - y0) * ph
          << ' ';
    }
    svg << "\"/>\n";
    double ly = kTop + 14 + 18 * static_cast<double>(i);
    svg << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly - 4 << "\" x2=\""
        << kWidth - kRight + 30 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color
        << "\" stroke-width=\"2\"/>\n<text x=\"" << kWidth - kRight + 36 << "\" y=\"" << ly << "\">"
        << xml_escape(series[i].name) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          std::span<const Bar> bars) {
  double y0 = 0.0, y1 = 0.0;
  for (const auto& b : bars) {
    y0 = std::min({y0, b.value, b.low.value_or(b.value)});
    y1 = std::max({y1, b.value, b.high.value_or(b.value)});
  }
  if (y1 <= y0) y1 = y0 + 1;
  y1 += (y1 - y0) * 0.05;

  double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto ypos = [&](double v) { return kTop + ph - (v - y0) / (y1 - y0) * ph; };
  std::ostringstream svg;
  chart_frame(svg, title, "", y_label, 0, 1, y0, y1, false);
  double slot = bars.empty() ? pw : pw / static_cast<double>(bars.size());
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    double w = slot * 0.6;
    double top = ypos(std::max(b.value, 0.0)), base = ypos(std::min(b.value, 0.0));
    svg << "<rect x=\"" << cx - w / 2 << "\" y=\"" << top << "\" width=\"" << w << "\" height=\""
        << base - top << "\" fill=\"" << kPalette[0] << "\"/>\n";
    if (b.low && b.high) {
      svg << "<line x1=\"" << cx << "\" y1=\"" << ypos(*b.low) << "\" x2=\"" << cx << "\" y2=\""
          << ypos(*b.high) << "\" stroke=\"#000\"/>\n";
      for (double v : {*b.low, *b.high}) {
        svg << "<line x1=\"" << cx - w / 6 << "\" y1=\"" << ypos(v) << "\" x2=\"" << cx + w / 6
            << "\" y2=\"" << ypos(v) << "\" stroke=\"#000\"/>\n";
      }
    }
    svg << "<text x=\"" << cx << "\" y=\"" << kTop + ph + 18 << "\" text-anchor=\"middle\">"
        << xml_escape(b.label) << "</text>\n"
        << "<text x=\"" << cx << "\" y=\"" << top - 4 << "\" text-anchor=\"middle\" font-size=\"10\">"
        << num(b.value) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---- report rendering ----

RenderedReport render_report(std::span<const std::filesystem::path> inputs) {
  if (inputs.empty()) throw Error(Errc::EmptyInput, "report needs at least one input file");
  RenderedReport out;
  std::ostringstream summary;
  std::vector<Bar> cold_bars;

  for (const auto& path : inputs) {
    std::string text = read_text_file(path);
    std::string stem = stem_of(path);

    if (looks_like_profile(text)) {
      std::istringstream in(text);
      Profile p = read_profile(in);
      DerivedMetrics m = derive(p);
      ChartSeries cap{stem, m.capacity_curve};
      out.files.push_back({stem + ".capacity.svg",
                           svg_line_chart("Capacity usage: " + stem, "time (s)",
                                          "RSS / peak RSS", std::span(&cap, 1),
                                          std::pair{0.0, 1.0})});
      ChartSeries touch{stem, m.touch_series};
      for (auto& pt : touch.points) pt.value /= 1024.0;
      out.files.push_back({stem + ".touch.svg",
                           svg_line_chart("Pages touched per interval: " + stem, "time (s)",
                                          "touched (MiB)", std::span(&touch, 1))});
      out.files.push_back({stem + ".metrics.csv", metrics_csv(m)});
      summary << stem << ": profile, " << p.samples.size() << " samples, peak "
              << num(static_cast<double>(m.peak_rss_kib) / 1024.0) << " MiB, mean est. bandwidth "
              << num(m.mean_est_bandwidth / 1e9) << " GB/s";
      if (m.cold_fraction) {
        summary << ", cold fraction " << num(*m.cold_fraction);
        cold_bars.push_back({stem, *m.cold_fraction, std::nullopt, std::nullopt});
      }
      summary << '\n';
      continue;
    }

    json j = detail::parse_json(text, path.string());
    std::string format = j.is_object() ? j.value("format", std::string()) : std::string();
    try {
      if (format == kSweepFormat) {
        std::ostringstream csv;
        csv << "fraction,status,median_seconds,slowdown,class\n";
        std::string cls = j.at("report").is_null() ? "" : j.at("report").at("class").get<std::string>();
        std::vector<Bar> bars;
        for (const auto& run : j.at("runs")) {
          double f = run.at("fraction").get<double>();
          std::string status = run.at("status").get<std::string>();
          csv << num(f) << ',' << status << ','
              << (run.at("median_seconds").is_null() ? "" : num(run.at("median_seconds").get<double>()))
              << ',' << (run.at("slowdown").is_null() ? "" : num(run.at("slowdown").get<double>()))
              << ',' << cls << '\n';
          if (!run.at("slowdown").is_null()) {
            bars.push_back({num(f * 100) + "%", run.at("slowdown").get<double>(), std::nullopt,
                            std::nullopt});
          }
        }
        out.files.push_back({stem + ".sweep.csv", csv.str()});
        out.files.push_back({stem + ".sweep.svg",
                             svg_bar_chart("Slowdown vs pooled fraction: " + stem,
                                           "slowdown", bars)});
        summary << stem << ": capacity sweep, class "
                << (cls.empty() ? "unassigned (" + j.value("unclassified_reason", std::string()) + ")"
                                : cls)
                << '\n';
      } else if (format == kScalingFormat) {
        std::ostringstream csv;
        csv << "links,status,median_seconds,speedup\n";
        std::vector<Bar> bars;
        for (const auto& run : j.at("runs")) {
          int links = run.at("links").get<int>();
          csv << links << ',' << run.at("status").get<std::string>() << ','
              << (run.at("median_seconds").is_null() ? "" : num(run.at("median_seconds").get<double>()))
              << ',' << (run.at("speedup").is_null() ? "" : num(run.at("speedup").get<double>()))
              << '\n';
          if (!run.at("speedup").is_null()) {
            bars.push_back({std::to_string(links), run.at("speedup").get<double>(), std::nullopt,
                            std::nullopt});
          }
        }
        out.files.push_back({stem + ".scaling.csv", csv.str()});
        out.files.push_back({stem + ".scaling.svg",
                             svg_bar_chart("Speedup vs emulated links: " + stem, "speedup", bars)});
        summary << stem << ": link scaling, " << j.at("runs").size() << " link counts\n";
      } else if (format == kSharingFormat) {
        std::ostringstream csv;
        csv << "config,co_runners,status,mean_seconds,min_seconds,max_seconds,slowdown_vs_private\n";
        std::vector<Bar> bars;
        for (const auto& c : j.at("configs")) {
          std::string label = c.at("label").get<std::string>();
          double mean = c.at("mean_seconds").get<double>();
          double lo = c.at("min_seconds").get<double>(), hi = c.at("max_seconds").get<double>();
          csv << csv_field(label) << ',' << c.at("co_runners").get<int>() << ','
              << c.at("status").get<std::string>() << ',' << num(mean) << ',' << num(lo) << ','
              << num(hi) << ','
              << (c.at("slowdown_vs_private").is_null()
                      ? ""
                      : num(c.at("slowdown_vs_private").get<double>()))
              << '\n';
          bars.push_back({label, mean, lo, hi});
        }
        out.files.push_back({stem + ".sharing.csv", csv.str()});
        out.files.push_back({stem + ".sharing.svg",
                             svg_bar_chart("Subject runtime under pool sharing: " + stem,
                                           "seconds (min/max whiskers)", bars)});
        summary << stem << ": sharing, " << j.at("configs").size() << " configurations\n";
      } else if (format == kMetricsFormat) {
        ChartSeries cap{stem, {}};
        for (const auto& pt : j.at("capacity_curve")) {
          cap.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
        }
        out.files.push_back({stem + ".capacity.svg",
                             svg_line_chart("Capacity usage: " + stem, "time (s)",
                                            "RSS / peak RSS", std::span(&cap, 1),
                                            std::pair{0.0, 1.0})});
        if (!j.at("cold_fraction").is_null()) {
          cold_bars.push_back({stem, j.at("cold_fraction").get<double>(), std::nullopt,
                               std::nullopt});
        }
        summary << stem << ": derived metrics\n";
      } else {
        throw Error(Errc::ParseError, path.string() + ": not a recognized cxlmem document");
      }
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, path.string() + ": " + e.what());
    }
  }

  if (!cold_bars.empty()) {
    out.files.push_back({"cold_pages.svg",
                         svg_bar_chart("Cold pages during compute", "cold fraction", cold_bars)});
  }
  out.summary = summary.str();
  return out;
}

}  // namespace cxlmem
