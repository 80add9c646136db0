#include "cxlmem/procfs.hpp"

#include <fcntl.h>
#include <sys/utsname.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <charconv>
#include <mutex>
#include <optional>
#include <set>

#include "cxlmem/error.hpp"

namespace cxlmem::procfs {
namespace {

std::string proc_path(pid_t pid, const char* leaf) {
  return "/proc/" + std::to_string(pid) + "/" + leaf;
}

[[noreturn]] void parse_error(std::string_view file, std::size_t line_no,
                              std::string_view why) {
  throw Error(Errc::ParseError, std::string(file) + " line " +
                                    std::to_string(line_no) + ": " +
                                    std::string(why));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

bool is_hex(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

// "00400000-7ffd1234 ---p 00000000 00:00 0   [rollup]"
bool is_rollup_header(std::string_view line) {
  auto dash = line.find('-');
  auto space = line.find(' ');
  if (dash == std::string_view::npos || space == std::string_view::npos ||
      dash > space) {
    return false;
  }
  return is_hex(line.substr(0, dash)) &&
         is_hex(line.substr(dash + 1, space - dash - 1));
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    fn(line, line_no);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
}

template <typename Fn>
void for_each_token(std::string_view line, Fn&& fn) {
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) fn(line.substr(start, i - start));
  }
}

}  // namespace

std::uint64_t total_pages(const NodePages& pages) {
  std::uint64_t sum = 0;
  for (const auto& [node, count] : pages) sum += count;
  return sum;
}

RollupParse parse_smaps_rollup(std::string_view text) {
  constexpr std::string_view kFile = "smaps_rollup";
  RollupParse out;
  if (trim(text).empty()) {
    out.empty = true;
    return out;
  }

  std::set<std::string, std::less<>> seen;
  bool first = true;
  for_each_line(text, [&](std::string_view raw, std::size_t line_no) {
    std::string_view line = trim(raw);
    if (line.empty()) return;
    if (first) {
      first = false;
      if (is_rollup_header(line)) return;
    }

    auto colon = line.find(':');
    if (colon == std::string_view::npos || colon == 0) {
      parse_error(kFile, line_no, "expected '<Field>: <value> kB'");
    }
    std::string_view key = line.substr(0, colon);
    for (char c : key) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') {
        parse_error(kFile, line_no, "bad field name");
      }
    }
    std::string_view rest = trim(line.substr(colon + 1));
    auto space = rest.find_first_of(" \t");
    std::string_view number = rest.substr(0, space);
    std::string_view unit =
        space == std::string_view::npos ? std::string_view{} : trim(rest.substr(space));
    auto value = parse_u64(number);
    if (!value) parse_error(kFile, line_no, "non-numeric value for " + std::string(key));
    if (!unit.empty() && unit != "kB") {
      parse_error(kFile, line_no, "unexpected unit '" + std::string(unit) + "'");
    }
    if (!seen.emplace(key).second) {
      parse_error(kFile, line_no, "duplicate field " + std::string(key));
    }

    std::uint64_t* slot = nullptr;
    if (key == "Rss") slot = &out.stats.rss_kib;
    else if (key == "Pss") slot = &out.stats.pss_kib;
    else if (key == "Referenced") slot = &out.stats.referenced_kib;
    else if (key == "Swap") slot = &out.stats.swap_kib;
    if (slot != nullptr) {
      if (unit != "kB") parse_error(kFile, line_no, std::string(key) + " lacks kB unit");
      *slot = *value;
    }
  });

  if (!seen.contains("Rss")) {
    throw Error(Errc::ParseError, "smaps_rollup: no Rss field (unrecognized file shape)");
  }
  for (const char* field : {"Pss", "Referenced", "Swap"}) {
    if (!seen.contains(field)) out.missing_fields.emplace_back(field);
  }
  return out;
}

NodePages parse_numa_maps(std::string_view text, std::uint64_t base_page_kib) {
  constexpr std::string_view kFile = "numa_maps";
  if (base_page_kib == 0) {
    throw Error(Errc::InvalidArgument, "numa_maps: base page size must be positive");
  }
  NodePages pages;
  for_each_line(text, [&](std::string_view raw, std::size_t line_no) {
    std::string_view line = trim(raw);
    if (line.empty()) return;

    auto space = line.find(' ');
    if (!is_hex(line.substr(0, space))) {
      parse_error(kFile, line_no, "line does not start with a mapping address");
    }

    std::uint64_t line_page_kib = base_page_kib;
    std::vector<std::pair<int, std::uint64_t>> counts;
    for_each_token(line.substr(space == std::string_view::npos ? line.size() : space),
                   [&](std::string_view token) {
      auto eq = token.find('=');
      if (eq == std::string_view::npos) return;
      std::string_view key = token.substr(0, eq);
      std::string_view val = token.substr(eq + 1);
      if (key == "kernelpagesize_kB") {
        auto kib = parse_u64(val);
        if (!kib || *kib == 0) parse_error(kFile, line_no, "bad kernelpagesize_kB");
        line_page_kib = *kib;
        return;
      }
      if (key.empty() || key.front() != 'N') return;
      auto node = parse_u64(key.substr(1));
      auto count = parse_u64(val);
      if (!node || *node > 4095 || !count) {
        parse_error(kFile, line_no, "malformed node token '" + std::string(token) + "'");
      }
      counts.emplace_back(static_cast<int>(*node), *count);
    });

    std::uint64_t scale = line_page_kib >= base_page_kib ? line_page_kib / base_page_kib : 1;
    for (const auto& [node, count] : counts) pages[node] += count * scale;
  });
  return pages;
}

std::uint64_t page_size_kib() {
  static const std::uint64_t kib = [] {
    long bytes = ::sysconf(_SC_PAGESIZE);
    return bytes > 0 ? static_cast<std::uint64_t>(bytes) / 1024 : 4;
  }();
  return kib;
}

std::string read_proc_file(const std::string& path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) throw_proc_error(errno, path);
  std::string data;
  char buf[16384];
  for (;;) {
    ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw_proc_error(err, path);
    }
    if (n == 0) break;
    data.append(buf, static_cast<std::size_t>(n));
  }
  ::close(fd);
  return data;
}

RollupParse read_rollup(pid_t pid) {
  auto parsed = parse_smaps_rollup(read_proc_file(proc_path(pid, "smaps_rollup")));
  if (!parsed.missing_fields.empty()) {
    static std::once_flag once;
    std::call_once(once, [&] {
      std::string fields;
      for (const auto& f : parsed.missing_fields) fields += (fields.empty() ? "" : ", ") + f;
      warn("smaps_rollup lacks " + fields + "; reporting 0");
    });
  }
  return parsed;
}

MemSnapshot read_mem_stats(pid_t pid) { return read_rollup(pid).stats; }

NodePages read_node_pages(pid_t pid) {
  return parse_numa_maps(read_proc_file(proc_path(pid, "numa_maps")), page_size_kib());
}

void clear_referenced(pid_t pid) {
  std::string path = proc_path(pid, "clear_refs");
  int fd = ::open(path.c_str(), O_WRONLY | O_CLOEXEC);
  if (fd < 0) throw_proc_error(errno, path);
  ssize_t n;
  do {
    n = ::write(fd, "1", 1);
  } while (n < 0 && errno == EINTR);
  int err = errno;
  ::close(fd);
  if (n != 1) throw_proc_error(err, path);
}

KernelVersion parse_kernel_release(std::string_view release) {
  KernelVersion v;
  int* parts[] = {&v.major, &v.minor, &v.patch};
  std::size_t idx = 0;
  const char* p = release.data();
  const char* end = release.data() + release.size();
  while (idx < 3 && p < end && std::isdigit(static_cast<unsigned char>(*p))) {
    auto [next, ec] = std::from_chars(p, end, *parts[idx]);
    if (ec != std::errc{}) break;
    ++idx;
    p = next;
    if (p < end && *p == '.') ++p;
    else break;
  }
  if (idx < 2) {
    throw Error(Errc::ParseError, "cannot parse kernel release '" + std::string(release) + "'");
  }
  return v;
}

std::string running_kernel_release() {
  struct utsname u {};
  if (::uname(&u) != 0) return {};
  return u.release;
}

void require_supported_kernel() {
  std::string release = running_kernel_release();
  if (parse_kernel_release(release) < kMinimumKernel) {
    throw Error(Errc::UnsupportedKernel,
                "kernel " + release +
                    " predates /proc/<pid>/smaps_rollup; Linux 4.14 or newer is required");
  }
}

}  // namespace cxlmem::procfs
