#pragma once

#include <sys/types.h>

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cxlmem::procfs {

/// Resident page count per NUMA node, in base pages.
using NodePages = std::map<int, std::uint64_t>;

/// One timestamped sample of a process's memory accounting.
///
/// `timestamp_ns` is monotonic time since supervision start and is filled in
/// by the caller; the readers below leave it at zero.
struct MemSnapshot {
  std::int64_t timestamp_ns = 0;
  std::uint64_t rss_kib = 0;
  std::uint64_t pss_kib = 0;
  std::uint64_t referenced_kib = 0;
  std::uint64_t swap_kib = 0;
  NodePages node_pages;

  bool operator==(const MemSnapshot&) const = default;
};

std::uint64_t total_pages(const NodePages& pages);

struct RollupParse {
  MemSnapshot stats;
  // Tracked fields the file did not carry (older kernels); they read as 0.
  std::vector<std::string> missing_fields;
  // True when the file had no content at all: the task has no address space
  // (kernel thread, or a process that already tore down its mm on exit).
  bool empty = false;
};

/// Parses the text of /proc/<pid>/smaps_rollup. Throws Error(ParseError).
RollupParse parse_smaps_rollup(std::string_view text);

/// Sums the N<node>=<pages> tokens of /proc/<pid>/numa_maps. Counts on
/// huge-page mappings (kernelpagesize_kB larger than the base page) are
/// converted to base pages. Throws Error(ParseError).
NodePages parse_numa_maps(std::string_view text, std::uint64_t base_page_kib);

/// Base page size of the running system, in KiB.
std::uint64_t page_size_kib();

/// Reads the whole of a procfs file; errors map to ProcessGone,
/// PermissionDenied or Io.
std::string read_proc_file(const std::string& path);

/// Full rollup read for a live pid. Missing fields are reported via warn().
RollupParse read_rollup(pid_t pid);

/// Capacity fields (Rss, Pss, Referenced, Swap) of a live process.
MemSnapshot read_mem_stats(pid_t pid);

NodePages read_node_pages(pid_t pid);

/// Clears the Accessed/Referenced bits of every page of `pid` by writing "1"
/// to its clear_refs file.
void clear_referenced(pid_t pid);

struct KernelVersion {
  int major = 0;
  int minor = 0;
  int patch = 0;

  auto operator<=>(const KernelVersion&) const = default;
};

inline constexpr KernelVersion kMinimumKernel{4, 14, 0};

KernelVersion parse_kernel_release(std::string_view release);
std::string running_kernel_release();

/// Throws Error(UnsupportedKernel) when the running kernel predates
/// smaps_rollup.
void require_supported_kernel();

}  // namespace cxlmem::procfs
