#include "cxlmem/profile_io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cxlmem/error.hpp"
#include "cxlmem/procfs.hpp"
#include "json_support.hpp"

namespace cxlmem {

using nlohmann::json;

namespace detail {

json to_json_value(const Topology& topo) {
  json nodes = json::array();
  for (const auto& n : topo.nodes) {
    nodes.push_back({{"id", n.id},
                     {"total_bytes", n.total_bytes},
                     {"free_bytes", n.free_bytes},
                     {"cpus", n.cpus}});
  }
  return {{"node_count", topo.node_count()},
          {"nodes", nodes},
          {"page_size_bytes", topo.page_size_bytes},
          {"cpu_count", topo.cpu_count},
          {"kernel_release", topo.kernel_release}};
}

json to_json_value(const Composition& c) {
  return {{"kind", to_string(c.kind)},
          {"local_node", c.local_node},
          {"pool_nodes", c.pool_nodes},
          {"pooled_fraction", c.pooled_fraction},
          {"peak_usage_bytes", c.peak_usage_bytes},
          {"link_count", c.link_count},
          {"local_in_interleave", c.local_in_interleave},
          {"cpu_binding", c.cpu_binding},
          {"lock_headroom_bytes", c.lock_headroom_bytes}};
}

Composition composition_from_json_value(const json& j) {
  if (!j.is_object()) throw Error(Errc::ParseError, "composition must be a JSON object");
  Composition c;
  try {
    if (j.contains("kind")) c.kind = composition_kind_from_string(j.at("kind").get<std::string>());
    c.local_node = j.value("local_node", c.local_node);
    c.pool_nodes = j.value("pool_nodes", c.pool_nodes);
    c.pooled_fraction = j.value("pooled_fraction", c.pooled_fraction);
    c.peak_usage_bytes = j.value("peak_usage_bytes", c.peak_usage_bytes);
    c.link_count = j.value("link_count", static_cast<int>(c.pool_nodes.size()));
    c.local_in_interleave = j.value("local_in_interleave", c.local_in_interleave);
    c.cpu_binding = j.value("cpu_binding", c.cpu_binding);
    c.lock_headroom_bytes = j.value("lock_headroom_bytes", c.lock_headroom_bytes);
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("bad composition: ") + e.what());
  }
  validate(c);
  return c;
}

json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(Errc::ParseError, std::string(what) + ": " + e.what());
  }
}

}  // namespace detail

namespace {

json snapshot_record(const Sample& s) {
  json pages = json::object();
  for (const auto& [node, count] : s.snapshot.node_pages) pages[std::to_string(node)] = count;
  return {{"record", "snapshot"},
          {"t_ns", s.snapshot.timestamp_ns},
          {"rss_kib", s.snapshot.rss_kib},
          {"pss_kib", s.snapshot.pss_kib},
          {"referenced_kib", s.snapshot.referenced_kib},
          {"swap_kib", s.snapshot.swap_kib},
          {"node_pages", pages},
          {"trigger", to_string(s.trigger)},
          {"cleared", s.cleared},
          {"has_address_space", s.has_address_space}};
}

Sample sample_from(const json& j) {
  Sample s;
  s.snapshot.timestamp_ns = j.at("t_ns").get<std::int64_t>();
  s.snapshot.rss_kib = j.at("rss_kib").get<std::uint64_t>();
  s.snapshot.pss_kib = j.value("pss_kib", std::uint64_t{0});
  s.snapshot.referenced_kib = j.value("referenced_kib", std::uint64_t{0});
  s.snapshot.swap_kib = j.value("swap_kib", std::uint64_t{0});
  if (j.contains("node_pages")) {
    for (const auto& [node, count] : j.at("node_pages").items()) {
      s.snapshot.node_pages[std::stoi(node)] = count.get<std::uint64_t>();
    }
  }
  s.trigger = sample_trigger_from_string(j.value("trigger", std::string("timer")));
  s.cleared = j.value("cleared", false);
  s.has_address_space = j.value("has_address_space", true);
  return s;
}

}  // namespace

void write_profile(std::ostream& out, const Profile& p, const Topology* machine) {
  json header = {{"record", "header"},
                 {"format", kProfileFormat},
                 {"version", kProfileFormatVersion},
                 {"pids", p.pids},
                 {"command", p.command},
                 {"rank", p.rank},
                 {"mode", to_string(p.mode)},
                 {"period_s", p.period_s},
                 {"start_monotonic_ns", p.start_monotonic_ns},
                 {"basis", p.basis}};
  if (machine != nullptr) header["machine"] = detail::to_json_value(*machine);
  out << header.dump() << '\n';

  std::size_t m = 0;
  for (const auto& s : p.samples) {
    while (m < p.phase_marks.size() && p.phase_marks[m].timestamp_ns < s.snapshot.timestamp_ns) {
      const auto& mark = p.phase_marks[m++];
      out << json{{"record", "mark"}, {"t_ns", mark.timestamp_ns}, {"label", to_string(mark.label)}}
                 .dump()
          << '\n';
    }
    out << snapshot_record(s).dump() << '\n';
    // A mark shares its timestamp with the sample taken at the stop; it
    // follows that sample.
    while (m < p.phase_marks.size() && p.phase_marks[m].timestamp_ns == s.snapshot.timestamp_ns) {
      const auto& mark = p.phase_marks[m++];
      out << json{{"record", "mark"}, {"t_ns", mark.timestamp_ns}, {"label", to_string(mark.label)}}
                 .dump()
          << '\n';
    }
  }
  for (; m < p.phase_marks.size(); ++m) {
    const auto& mark = p.phase_marks[m];
    out << json{{"record", "mark"}, {"t_ns", mark.timestamp_ns}, {"label", to_string(mark.label)}}
               .dump()
        << '\n';
  }
  out << json{{"record", "footer"},
              {"wall_time_s", p.wall_time_s},
              {"exit_status", p.exit_status},
              {"crashed", p.crashed},
              {"term_signal", p.term_signal},
              {"warnings", p.warnings}}
             .dump()
      << '\n';
}

Profile read_profile(std::istream& in) {
  Profile p;
  bool have_header = false;
  bool have_footer = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string where = "profile line " + std::to_string(line_no);
    json j = detail::parse_json(line, where);
    try {
      std::string record = j.at("record").get<std::string>();
      if (have_footer) throw Error(Errc::ParseError, where + ": record after the footer");
      if (!have_header) {
        if (record != "header" || j.value("format", std::string()) != kProfileFormat) {
          throw Error(Errc::ParseError, where + ": expected a " + std::string(kProfileFormat) +
                                            " header record");
        }
        if (j.value("version", 0) > kProfileFormatVersion) {
          throw Error(Errc::ParseError, where + ": unsupported profile version");
        }
        p.pids = j.value("pids", std::vector<pid_t>{});
        p.command = j.value("command", std::vector<std::string>{});
        p.rank = j.value("rank", -1);
        p.mode = sampling_mode_from_string(j.value("mode", std::string("timer")));
        p.period_s = j.value("period_s", 1.0);
        p.start_monotonic_ns = j.value("start_monotonic_ns", std::int64_t{0});
        p.basis = j.value("basis", std::string("rss"));
        have_header = true;
      } else if (record == "snapshot") {
        p.samples.push_back(sample_from(j));
      } else if (record == "mark") {
        p.phase_marks.push_back({j.at("t_ns").get<std::int64_t>(),
                                 phase_label_from_string(j.at("label").get<std::string>())});
      } else if (record == "footer") {
        p.wall_time_s = j.value("wall_time_s", 0.0);
        p.exit_status = j.value("exit_status", 0);
        p.crashed = j.value("crashed", false);
        p.term_signal = j.value("term_signal", 0);
        p.warnings = j.value("warnings", std::vector<std::string>{});
        have_footer = true;
      } else {
        throw Error(Errc::ParseError, where + ": unknown record '" + record + "'");
      }
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, where + ": " + e.what());
    } catch (const Error& e) {
      if (e.code() == Errc::ParseError) throw;
      throw Error(Errc::ParseError, where + ": " + e.what());
    }
  }
  if (!have_header) throw Error(Errc::ParseError, "profile has no header record");
  // A profile without its footer was cut short (the supervisor died, or the
  // file is still being written).
  if (!have_footer) throw Error(Errc::ParseError, "profile has no footer record; truncated?");
  return p;
}

void save_profile(const std::filesystem::path& path, const Profile& profile,
                  const Topology* machine, bool overwrite) {
  std::ostringstream out;
  write_profile(out, profile, machine);
  write_output_file(path, out.str(), overwrite);
}

Profile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  try {
    return read_profile(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::string topology_to_json(const Topology& topo) { return detail::to_json_value(topo).dump(2); }

std::string composition_to_json(const Composition& c) { return detail::to_json_value(c).dump(2); }

Composition composition_from_json(std::string_view text) {
  return detail::composition_from_json_value(detail::parse_json(text, "composition"));
}

void write_output_file(const std::filesystem::path& path, std::string_view contents,
                       bool overwrite) {
  std::error_code ec;
  if (!overwrite && std::filesystem::exists(path, ec)) {
    throw Error(Errc::InvalidArgument,
                path.string() + " already exists; pass --force to overwrite");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.close();
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace cxlmem
