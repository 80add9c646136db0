#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cxlmem {

struct NumaNode {
  int id = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t free_bytes = 0;
  std::vector<int> cpus;
};

/// Machine facts recorded in every output header.
struct Topology {
  std::vector<NumaNode> nodes;
  std::uint64_t page_size_bytes = 4096;
  int cpu_count = 1;
  std::string kernel_release;

  std::size_t node_count() const { return nodes.size(); }
  const NumaNode* find(int node_id) const;
  bool has_node(int node_id) const { return find(node_id) != nullptr; }
  std::vector<int> node_ids() const;
};

/// Nodes with memory, their CPUs and current free memory. Hosts without NUMA
/// support are reported as a single node 0.
Topology detect_topology();

/// Free memory on one node right now, as the kernel's per-node meminfo
/// reports it.
std::uint64_t node_free_bytes(int node_id);

/// Size of the largest CPU cache level, or 0 when sysfs does not say.
std::uint64_t last_level_cache_bytes();

}  // namespace cxlmem
