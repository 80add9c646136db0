#pragma once

#include <sched.h>
#include <sys/types.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cxlmem/topology.hpp"

namespace cxlmem {

inline constexpr std::uint64_t kMiB = 1024ull * 1024;
inline constexpr std::uint64_t kGiB = 1024ull * kMiB;
inline constexpr std::uint64_t kDefaultLockHeadroom = 64 * kMiB;

enum class CompositionKind {
  LocalOnly,
  CapacitySplit,
  RemoteOnly,
  BandwidthInterleave,
  SharedPool,
};

std::string_view to_string(CompositionKind kind);
CompositionKind composition_kind_from_string(std::string_view name);

/// A declarative emulated memory subsystem. The local node stands in for
/// host-attached DRAM; every pool node stands in for one CXL-attached
/// memory device reached over its own link.
struct Composition {
  CompositionKind kind = CompositionKind::LocalOnly;
  int local_node = 0;
  std::vector<int> pool_nodes;
  // CapacitySplit (and SharedPool in capacity mode): share of the peak
  // footprint that should land in the pool.
  double pooled_fraction = 0.0;
  std::uint64_t peak_usage_bytes = 0;
  // BandwidthInterleave: number of emulated links, equal to pool_nodes.size().
  int link_count = 0;
  // Whether the local node is part of the interleave set.
  bool local_in_interleave = true;
  int cpu_binding = 0;
  std::uint64_t lock_headroom_bytes = kDefaultLockHeadroom;

  bool operator==(const Composition&) const = default;
};

Composition local_only(int local_node = 0);
Composition remote_only(int local_node, int pool_node);
Composition capacity_split(int local_node, int pool_node, double pooled_fraction,
                           std::uint64_t peak_usage_bytes);
Composition bandwidth_interleave(int local_node, std::vector<int> pool_nodes,
                                 bool local_in_interleave = true);

/// True when the shared-pool composition spills by locking local memory
/// rather than interleaving.
bool uses_capacity_split(const Composition& c);

/// Checks the structural invariants; throws Error(InvalidArgument).
void validate(const Composition& c);

/// The node set the workload's memory policy is armed with.
std::vector<int> policy_nodes(const Composition& c);

std::string describe(const Composition& c);

/// Bytes of local memory to lock so that roughly (1 - pooled_fraction) of
/// the peak footprint still fits locally:
///   max(0, free_local - (1 - pooled_fraction) * peak_usage - headroom)
std::uint64_t compute_lock_bytes(std::uint64_t free_local, std::uint64_t peak_usage,
                                 double pooled_fraction,
                                 std::uint64_t headroom = kDefaultLockHeadroom);

/// CPU affinity and memory policy prepared in the parent and applied between
/// fork and exec, so the workload inherits both.
struct LaunchPolicy {
  static constexpr std::size_t kMaskBits = 1024;
  static constexpr std::size_t kMaskWords = kMaskBits / (8 * sizeof(unsigned long));

  bool pin_cpus = false;
  cpu_set_t cpus{};
  int memory_mode = 0;  // MPOL_DEFAULT
  std::array<unsigned long, kMaskWords> node_mask{};

  /// Async-signal-safe; returns 0 or an errno value.
  int apply_to_calling_thread() const noexcept;
};

LaunchPolicy make_launch_policy(const Composition& c, const Topology& topo);

/// Memory locked on one node by a helper process the toolkit owns. The
/// helper dies and the memory is unlocked when the reservation is released
/// or when the owning process exits.
class LockReservation {
 public:
  LockReservation() = default;
  LockReservation(LockReservation&& other) noexcept;
  LockReservation& operator=(LockReservation&& other) noexcept;
  LockReservation(const LockReservation&) = delete;
  LockReservation& operator=(const LockReservation&) = delete;
  ~LockReservation();

  int node() const { return node_; }
  std::uint64_t bytes() const { return bytes_; }
  pid_t holder_pid() const { return holder_; }
  bool held() const { return holder_ > 0; }

  void release() noexcept;

 private:
  friend LockReservation reserve_locked_memory(int, std::uint64_t, std::chrono::seconds);
  int node_ = -1;
  std::uint64_t bytes_ = 0;
  pid_t holder_ = -1;
  int keepalive_fd_ = -1;
};

/// Locks `bytes` of memory on `node`. Throws CompositionUnsatisfiable when
/// the memlock limit is too low or the lock fails.
LockReservation reserve_locked_memory(int node, std::uint64_t bytes,
                                      std::chrono::seconds timeout = std::chrono::minutes(10));

/// Checks RLIMIT_MEMLOCK (raising the soft limit when possible) and throws
/// CompositionUnsatisfiable with remediation text if `bytes` cannot be locked.
void ensure_lockable(std::uint64_t bytes);

/// An armed composition: a launch policy plus lock reservations. Releasing
/// is idempotent and also happens on destruction.
class ActiveComposition {
 public:
  ActiveComposition() = default;
  ActiveComposition(Composition c, LaunchPolicy policy, std::vector<LockReservation> locks,
                    std::uint64_t free_local_before);
  ActiveComposition(ActiveComposition&&) noexcept = default;
  ActiveComposition& operator=(ActiveComposition&&) noexcept = default;
  ~ActiveComposition() { release(); }

  const Composition& composition() const { return composition_; }
  const LaunchPolicy& launch_policy() const { return policy_; }
  const std::vector<LockReservation>& reservations() const { return locks_; }
  std::uint64_t locked_bytes() const;
  std::uint64_t free_local_before() const { return free_local_before_; }
  bool active() const { return active_; }

  void release() noexcept;

 private:
  Composition composition_;
  LaunchPolicy policy_;
  std::vector<LockReservation> locks_;
  std::uint64_t free_local_before_ = 0;
  bool active_ = false;
};

/// Checks that the host can satisfy `c`; throws CompositionUnsatisfiable.
void check_satisfiable(const Composition& c, const Topology& topo);

ActiveComposition apply_composition(const Composition& c, const Topology& topo);
ActiveComposition apply_composition(const Composition& c);
void release_composition(ActiveComposition& active) noexcept;

/// Applies a launch policy to the calling thread for in-process work (the
/// probes) and restores the previous affinity and memory policy on exit.
/// Threads created while it is alive inherit the policy.
class ScopedThreadPolicy {
 public:
  explicit ScopedThreadPolicy(const LaunchPolicy& policy);
  ~ScopedThreadPolicy();
  ScopedThreadPolicy(const ScopedThreadPolicy&) = delete;
  ScopedThreadPolicy& operator=(const ScopedThreadPolicy&) = delete;

 private:
  void restore() noexcept;

  cpu_set_t saved_cpus_{};
  bool restore_cpus_ = false;
  int saved_mode_ = 0;
  std::array<unsigned long, LaunchPolicy::kMaskWords> saved_mask_{};
  bool restore_policy_ = false;
};

/// Per-host policy for a shared pool. A fraction of 0 means interleaving
/// over {local node, pool node}; a fraction in (0, 1) means a capacity split
/// sized from `peak_usage_bytes`.
struct SharedHostPolicy {
  double pooled_fraction = 0.0;
  std::uint64_t peak_usage_bytes = 0;
};

/// One composition per emulated host, each with its own local node, all
/// sharing `pool_node`. `per_host` is either empty or has one entry per host.
std::vector<Composition> plan_sharing(int hosts, int pool_node,
                                      std::span<const SharedHostPolicy> per_host,
                                      const Topology& topo);

}  // namespace cxlmem
