#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cxlmem/emulator.hpp"
#include "cxlmem/procfs.hpp"

namespace cxlmem {

enum class ProbeKind { Triad, Chase };
std::string_view to_string(ProbeKind kind);
ProbeKind probe_kind_from_string(std::string_view name);

struct ProbeResult {
  ProbeKind kind = ProbeKind::Triad;
  std::string composition;
  // GB/s (1e9 bytes) for triad, nanoseconds per dependent load for chase.
  double value = 0.0;
  std::vector<double> repetitions;
  std::uint64_t working_set_bytes = 0;
  int threads = 1;
  std::uint64_t seed = 0;
  // Resident pages per node of the probing process, read before timing.
  procfs::NodePages placement;
  // False when the measurement cannot be trusted (cache-resident chase,
  // failed triad validation); `note` says why.
  bool valid = true;
  std::string note;
};

struct TriadOptions {
  std::uint64_t working_set_bytes = kGiB;
  // 0 means one thread per CPU the policy allows.
  int threads = 0;
  int repetitions = 10;
  double scalar = 3.0;
};

struct ChaseOptions {
  std::uint64_t working_set_bytes = kGiB;
  std::uint64_t seed = 0x5eed;
  // 0 picks max(2 * nodes, 2^24).
  std::uint64_t loads = 0;
};

inline constexpr std::size_t kChaseNodeBytes = 64;

/// a[i] = b[i] + s * c[i] over three arrays sharing the working set. Reports
/// the best repetition, counting 24 bytes per element (no write-allocate).
/// With a composition, the calling thread runs under its launch policy and
/// the arrays are allocated after the policy is in place.
ProbeResult triad(const TriadOptions& options, const ActiveComposition* composition = nullptr);

/// Dependent loads around a random single cycle of 64-byte nodes.
ProbeResult chase(const ChaseOptions& options, const ActiveComposition* composition = nullptr);

/// Sattolo's algorithm: next[i] is the successor of i on one cycle through
/// all n elements.
std::vector<std::uint32_t> sattolo_cycle(std::size_t n, std::uint64_t seed);

/// Steps taken from `start` until the walk returns to it.
std::size_t cycle_length(std::span<const std::uint32_t> next, std::uint32_t start = 0);

}  // namespace cxlmem
