#include "cxlmem/emulator.hpp"

#include <numaif.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "cxlmem/error.hpp"
#include "cxlmem/procfs.hpp"

namespace cxlmem {
namespace {

[[noreturn]] void invalid(const std::string& why) {
  throw Error(Errc::InvalidArgument, "invalid composition: " + why);
}

[[noreturn]] void unsatisfiable(const std::string& why) {
  throw Error(Errc::CompositionUnsatisfiable, why);
}

void set_node_bit(std::array<unsigned long, LaunchPolicy::kMaskWords>& mask, int node) {
  constexpr std::size_t bits = 8 * sizeof(unsigned long);
  auto n = static_cast<std::size_t>(node);
  if (node < 0 || n >= LaunchPolicy::kMaskBits) invalid("node id out of range");
  mask[n / bits] |= 1ul << (n % bits);
}

// Fraction of the reservation's pages that must sit on the requested node.
constexpr double kLockPlacementFloor = 0.9;

}  // namespace

std::string_view to_string(CompositionKind kind) {
  switch (kind) {
    case CompositionKind::LocalOnly: return "local_only";
    case CompositionKind::CapacitySplit: return "capacity_split";
    case CompositionKind::RemoteOnly: return "remote_only";
    case CompositionKind::BandwidthInterleave: return "bandwidth_interleave";
    case CompositionKind::SharedPool: return "shared_pool";
  }
  return "unknown";
}

CompositionKind composition_kind_from_string(std::string_view name) {
  for (auto k : {CompositionKind::LocalOnly, CompositionKind::CapacitySplit,
                 CompositionKind::RemoteOnly, CompositionKind::BandwidthInterleave,
                 CompositionKind::SharedPool}) {
    if (to_string(k) == name) return k;
  }
  throw Error(Errc::InvalidArgument, "unknown composition kind '" + std::string(name) + "'");
}

Composition local_only(int local_node) {
  Composition c;
  c.kind = CompositionKind::LocalOnly;
  c.local_node = local_node;
  c.cpu_binding = local_node;
  return c;
}

Composition remote_only(int local_node, int pool_node) {
  Composition c = local_only(local_node);
  c.kind = CompositionKind::RemoteOnly;
  c.pool_nodes = {pool_node};
  return c;
}

Composition capacity_split(int local_node, int pool_node, double pooled_fraction,
                           std::uint64_t peak_usage_bytes) {
  Composition c = local_only(local_node);
  c.kind = CompositionKind::CapacitySplit;
  c.pool_nodes = {pool_node};
  c.pooled_fraction = pooled_fraction;
  c.peak_usage_bytes = peak_usage_bytes;
  return c;
}

Composition bandwidth_interleave(int local_node, std::vector<int> pool_nodes,
                                 bool local_in_interleave) {
  Composition c = local_only(local_node);
  c.kind = CompositionKind::BandwidthInterleave;
  c.link_count = static_cast<int>(pool_nodes.size());
  c.pool_nodes = std::move(pool_nodes);
  c.local_in_interleave = local_in_interleave;
  return c;
}

bool uses_capacity_split(const Composition& c) {
  return c.kind == CompositionKind::CapacitySplit ||
         (c.kind == CompositionKind::SharedPool && c.pooled_fraction > 0.0 &&
          c.pooled_fraction < 1.0);
}

void validate(const Composition& c) {
  if (c.local_node < 0) invalid("negative local node");
  if (c.cpu_binding != c.local_node) invalid("cpu_binding must equal local_node");
  std::set<int> seen;
  for (int n : c.pool_nodes) {
    if (n < 0) invalid("negative pool node");
    if (n == c.local_node) invalid("pool node equals local node");
    if (!seen.insert(n).second) invalid("duplicate pool node");
  }
  if (!(c.pooled_fraction >= 0.0 && c.pooled_fraction <= 1.0)) {
    invalid("pooled_fraction outside [0, 1]");
  }

  switch (c.kind) {
    case CompositionKind::LocalOnly:
      break;
    case CompositionKind::CapacitySplit:
      if (!(c.pooled_fraction > 0.0 && c.pooled_fraction < 1.0)) {
        invalid("capacity split needs 0 < pooled_fraction < 1");
      }
      if (c.peak_usage_bytes == 0) invalid("capacity split needs peak_usage_bytes > 0");
      if (c.pool_nodes.empty()) invalid("capacity split needs a pool node");
      break;
    case CompositionKind::RemoteOnly:
      if (c.pool_nodes.empty()) invalid("remote-only needs a pool node");
      break;
    case CompositionKind::BandwidthInterleave:
      if (c.link_count < 1) invalid("bandwidth interleave needs link_count >= 1");
      if (static_cast<std::size_t>(c.link_count) != c.pool_nodes.size()) {
        invalid("link_count must equal the number of pool nodes");
      }
      break;
    case CompositionKind::SharedPool:
      if (c.pool_nodes.empty()) invalid("shared pool needs a pool node");
      if (uses_capacity_split(c) && c.peak_usage_bytes == 0) {
        invalid("shared pool capacity split needs peak_usage_bytes > 0");
      }
      break;
  }
}

std::vector<int> policy_nodes(const Composition& c) {
  switch (c.kind) {
    case CompositionKind::LocalOnly:
      return {c.local_node};
    case CompositionKind::RemoteOnly:
      return {c.pool_nodes.front()};
    case CompositionKind::CapacitySplit:
      return {c.local_node, c.pool_nodes.front()};
    case CompositionKind::BandwidthInterleave:
    case CompositionKind::SharedPool: {
      if (uses_capacity_split(c)) return {c.local_node, c.pool_nodes.front()};
      std::vector<int> nodes;
      if (c.local_in_interleave || c.kind == CompositionKind::SharedPool) {
        nodes.push_back(c.local_node);
      }
      nodes.insert(nodes.end(), c.pool_nodes.begin(), c.pool_nodes.end());
      return nodes;
    }
  }
  return {c.local_node};
}

std::string describe(const Composition& c) {
  std::ostringstream out;
  out << to_string(c.kind) << "(local=" << c.local_node;
  if (!c.pool_nodes.empty()) {
    out << " pool=";
    for (std::size_t i = 0; i < c.pool_nodes.size(); ++i) {
      out << (i ? "," : "") << c.pool_nodes[i];
    }
  }
  if (uses_capacity_split(c)) {
    out << " fraction=" << c.pooled_fraction << " peak=" << c.peak_usage_bytes;
  }
  if (c.kind == CompositionKind::BandwidthInterleave) {
    out << " links=" << c.link_count << (c.local_in_interleave ? " +local" : "");
  }
  out << ")";
  return out.str();
}

std::uint64_t compute_lock_bytes(std::uint64_t free_local, std::uint64_t peak_usage,
                                 double pooled_fraction, std::uint64_t headroom) {
  if (!(pooled_fraction >= 0.0 && pooled_fraction <= 1.0)) {
    throw Error(Errc::InvalidArgument, "pooled_fraction outside [0, 1]");
  }
  if (peak_usage == 0) {
    warn("peak usage is 0; locking all free local memory except the headroom");
  }
  auto keep = static_cast<std::uint64_t>(
      std::llround((1.0 - pooled_fraction) * static_cast<double>(peak_usage)));
  std::uint64_t reserved = keep + headroom;
  return free_local > reserved ? free_local - reserved : 0;
}

int LaunchPolicy::apply_to_calling_thread() const noexcept {
  if (pin_cpus && ::sched_setaffinity(0, sizeof cpus, &cpus) != 0) return errno;
  if (memory_mode != MPOL_DEFAULT) {
    if (::set_mempolicy(memory_mode, node_mask.data(), kMaskBits + 1) != 0) return errno;
  }
  return 0;
}

LaunchPolicy make_launch_policy(const Composition& c, const Topology& topo) {
  LaunchPolicy policy;
  CPU_ZERO(&policy.cpus);
  if (const NumaNode* node = topo.find(c.cpu_binding); node != nullptr && !node->cpus.empty()) {
    policy.pin_cpus = true;
    for (int cpu : node->cpus) CPU_SET(cpu, &policy.cpus);
  }

  bool interleave = (c.kind == CompositionKind::BandwidthInterleave ||
                     c.kind == CompositionKind::SharedPool) &&
                    !uses_capacity_split(c);
  policy.memory_mode = interleave ? MPOL_INTERLEAVE : MPOL_BIND;
  for (int node : policy_nodes(c)) set_node_bit(policy.node_mask, node);
  return policy;
}

ActiveComposition::ActiveComposition(Composition c, LaunchPolicy policy,
                                     std::vector<LockReservation> locks,
                                     std::uint64_t free_local_before)
    : composition_(std::move(c)),
      policy_(policy),
      locks_(std::move(locks)),
      free_local_before_(free_local_before),
      active_(true) {}

std::uint64_t ActiveComposition::locked_bytes() const {
  std::uint64_t total = 0;
  for (const auto& lock : locks_) {
    if (lock.held()) total += lock.bytes();
  }
  return total;
}

void ActiveComposition::release() noexcept {
  if (!active_) return;
  for (auto& lock : locks_) lock.release();
  locks_.clear();
  active_ = false;
}

void check_satisfiable(const Composition& c, const Topology& topo) {
  validate(c);
  if (c.kind != CompositionKind::LocalOnly && topo.node_count() < 2) {
    unsatisfiable("host has a single NUMA node; " + std::string(to_string(c.kind)) +
                  " needs at least two");
  }
  if (!topo.has_node(c.local_node)) {
    unsatisfiable("local node " + std::to_string(c.local_node) + " does not exist");
  }
  for (int n : c.pool_nodes) {
    if (!topo.has_node(n)) unsatisfiable("pool node " + std::to_string(n) + " does not exist");
  }
}

ActiveComposition apply_composition(const Composition& c, const Topology& topo) {
  check_satisfiable(c, topo);
  LaunchPolicy policy = make_launch_policy(c, topo);
  std::uint64_t free_local = node_free_bytes(c.local_node);

  std::vector<LockReservation> locks;
  if (uses_capacity_split(c)) {
    std::uint64_t bytes = compute_lock_bytes(free_local, c.peak_usage_bytes,
                                             c.pooled_fraction, c.lock_headroom_bytes);
    if (bytes > 0) {
      ensure_lockable(bytes);
      LockReservation lock = reserve_locked_memory(c.local_node, bytes);
      auto pages = procfs::read_node_pages(lock.holder_pid());
      std::uint64_t total = procfs::total_pages(pages);
      double share = total == 0 ? 0.0
                                : static_cast<double>(pages[c.local_node]) /
                                      static_cast<double>(total);
      if (share < kLockPlacementFloor) {
        lock.release();
        throw Error(Errc::PartialArming,
                    "locked memory landed off node " + std::to_string(c.local_node) +
                        " (share " + std::to_string(share) + "); reservation rolled back");
      }
      locks.push_back(std::move(lock));
    }
  }
  return ActiveComposition(c, policy, std::move(locks), free_local);
}

ActiveComposition apply_composition(const Composition& c) {
  return apply_composition(c, detect_topology());
}

void release_composition(ActiveComposition& active) noexcept { active.release(); }

ScopedThreadPolicy::ScopedThreadPolicy(const LaunchPolicy& policy) {
  if (policy.pin_cpus && ::sched_getaffinity(0, sizeof saved_cpus_, &saved_cpus_) == 0) {
    restore_cpus_ = true;
  }
  if (policy.memory_mode != MPOL_DEFAULT &&
      ::get_mempolicy(&saved_mode_, saved_mask_.data(), LaunchPolicy::kMaskBits + 1, nullptr,
                      0) == 0) {
    restore_policy_ = true;
  }
  if (int err = policy.apply_to_calling_thread(); err != 0) {
    restore();
    throw Error(Errc::CompositionUnsatisfiable,
                std::string("cannot arm policy on calling thread: ") + std::strerror(err));
  }
}

ScopedThreadPolicy::~ScopedThreadPolicy() { restore(); }

void ScopedThreadPolicy::restore() noexcept {
  if (restore_policy_) {
    // MPOL_F_STATIC_NODES | MPOL_F_RELATIVE_NODES; numaif.h does not define them.
    constexpr int kModeFlags = (1 << 15) | (1 << 14);
    int mode_only = saved_mode_ & ~kModeFlags;
    ::set_mempolicy(saved_mode_, mode_only == MPOL_DEFAULT ? nullptr : saved_mask_.data(),
                    LaunchPolicy::kMaskBits + 1);
    restore_policy_ = false;
  }
  if (restore_cpus_) {
    ::sched_setaffinity(0, sizeof saved_cpus_, &saved_cpus_);
    restore_cpus_ = false;
  }
}

std::vector<Composition> plan_sharing(int hosts, int pool_node,
                                      std::span<const SharedHostPolicy> per_host,
                                      const Topology& topo) {
  if (hosts < 1) throw Error(Errc::InvalidArgument, "sharing needs at least one host");
  if (!per_host.empty() && per_host.size() != static_cast<std::size_t>(hosts)) {
    throw Error(Errc::InvalidArgument, "per-host policies must match the host count");
  }
  if (static_cast<std::size_t>(hosts) + 1 > topo.node_count()) {
    unsatisfiable(std::to_string(hosts) + " emulated host(s) plus a pool need " +
                  std::to_string(hosts + 1) + " NUMA nodes; host has " +
                  std::to_string(topo.node_count()));
  }
  if (!topo.has_node(pool_node)) {
    unsatisfiable("pool node " + std::to_string(pool_node) + " does not exist");
  }

  std::vector<int> locals;
  for (int id : topo.node_ids()) {
    if (id != pool_node && locals.size() < static_cast<std::size_t>(hosts)) locals.push_back(id);
  }

  std::vector<Composition> plan;
  for (int h = 0; h < hosts; ++h) {
    SharedHostPolicy policy = per_host.empty() ? SharedHostPolicy{} : per_host[static_cast<std::size_t>(h)];
    int local = locals[static_cast<std::size_t>(h)];
    Composition c;
    if (policy.pooled_fraction > 0.0 && policy.pooled_fraction < 1.0) {
      c = capacity_split(local, pool_node, policy.pooled_fraction, policy.peak_usage_bytes);
    } else {
      c = bandwidth_interleave(local, {pool_node}, true);
    }
    if (hosts > 1) c.kind = CompositionKind::SharedPool;
    validate(c);
    plan.push_back(std::move(c));
  }
  return plan;
}

}  // namespace cxlmem
