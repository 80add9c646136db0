#include "cxlmem/topology.hpp"

#include <numa.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "cxlmem/error.hpp"
#include "cxlmem/procfs.hpp"

namespace cxlmem {
namespace {

bool numa_usable() {
  static const bool ok = ::numa_available() >= 0;
  return ok;
}

std::uint64_t meminfo_field(const std::string& key) {
  std::ifstream in("/proc/meminfo");
  std::string name;
  std::uint64_t kib = 0;
  std::string unit;
  while (in >> name >> kib) {
    std::getline(in, unit);
    if (name == key + ":") return kib * 1024;
  }
  return 0;
}

std::vector<int> all_cpus() {
  std::vector<int> cpus;
  long n = ::sysconf(_SC_NPROCESSORS_ONLN);
  for (long i = 0; i < std::max(1L, n); ++i) cpus.push_back(static_cast<int>(i));
  return cpus;
}

std::vector<int> cpus_of_node(int node) {
  std::vector<int> cpus;
  struct bitmask* mask = ::numa_allocate_cpumask();
  if (::numa_node_to_cpus(node, mask) == 0) {
    for (unsigned i = 0; i < mask->size; ++i) {
      if (::numa_bitmask_isbitset(mask, i)) cpus.push_back(static_cast<int>(i));
    }
  }
  ::numa_free_cpumask(mask);
  return cpus;
}

// Parses sizes such as "32K", "2048K", "105M".
std::uint64_t parse_cache_size(std::string text) {
  if (text.empty()) return 0;
  std::uint64_t scale = 1;
  char suffix = text.back();
  if (suffix == 'K') scale = 1024;
  else if (suffix == 'M') scale = 1024 * 1024;
  if (scale != 1) text.pop_back();
  try {
    return std::stoull(text) * scale;
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

const NumaNode* Topology::find(int node_id) const {
  auto it = std::find_if(nodes.begin(), nodes.end(),
                         [&](const NumaNode& n) { return n.id == node_id; });
  return it == nodes.end() ? nullptr : &*it;
}

std::vector<int> Topology::node_ids() const {
  std::vector<int> ids;
  for (const auto& n : nodes) ids.push_back(n.id);
  return ids;
}

std::uint64_t node_free_bytes(int node_id) {
  if (!numa_usable()) {
    if (node_id != 0) throw Error(Errc::CompositionUnsatisfiable, "no NUMA node " + std::to_string(node_id));
    return meminfo_field("MemFree");
  }
  long long free = 0;
  if (::numa_node_size64(node_id, &free) < 0) {
    throw Error(Errc::CompositionUnsatisfiable, "no NUMA node " + std::to_string(node_id));
  }
  return static_cast<std::uint64_t>(free);
}

Topology detect_topology() {
  Topology topo;
  topo.page_size_bytes = procfs::page_size_kib() * 1024;
  topo.cpu_count = static_cast<int>(std::max(1L, ::sysconf(_SC_NPROCESSORS_ONLN)));
  topo.kernel_release = procfs::running_kernel_release();

  if (!numa_usable()) {
    topo.nodes.push_back({0, meminfo_field("MemTotal"), meminfo_field("MemFree"), all_cpus()});
    return topo;
  }
  int max_node = ::numa_max_node();
  for (int id = 0; id <= max_node; ++id) {
    if (!::numa_bitmask_isbitset(::numa_all_nodes_ptr, static_cast<unsigned>(id))) continue;
    long long free = 0;
    long long total = ::numa_node_size64(id, &free);
    if (total <= 0) continue;  // memoryless node
    topo.nodes.push_back({id, static_cast<std::uint64_t>(total),
                          static_cast<std::uint64_t>(free), cpus_of_node(id)});
  }
  if (topo.nodes.empty()) {
    topo.nodes.push_back({0, meminfo_field("MemTotal"), meminfo_field("MemFree"), all_cpus()});
  }
  return topo;
}

std::uint64_t last_level_cache_bytes() {
  namespace fs = std::filesystem;
  std::uint64_t best = 0;
  int best_level = -1;
  std::error_code ec;
  fs::path base = "/sys/devices/system/cpu/cpu0/cache";
  for (const auto& entry : fs::directory_iterator(base, ec)) {
    if (entry.path().filename().string().rfind("index", 0) != 0) continue;
    std::ifstream level_in(entry.path() / "level");
    std::ifstream size_in(entry.path() / "size");
    int level = 0;
    std::string size;
    if (!(level_in >> level) || !(size_in >> size)) continue;
    std::uint64_t bytes = parse_cache_size(size);
    if (level > best_level || (level == best_level && bytes > best)) {
      best_level = level;
      best = bytes;
    }
  }
  return best;
}

}  // namespace cxlmem
