#include "cxlmem/probes.hpp"

#include <sched.h>
#include <unistd.h>

#include <algorithm>
#include <barrier>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <thread>

#include "cxlmem/error.hpp"
#include "cxlmem/topology.hpp"

namespace cxlmem {
namespace {

using Clock = std::chrono::steady_clock;

// Below this a dependent load was served from cache.
constexpr double kCacheResidentNs = 10.0;

struct alignas(kChaseNodeBytes) ChaseNode {
  ChaseNode* next;
};
static_assert(sizeof(ChaseNode) == kChaseNodeBytes);

int allowed_cpus() {
  cpu_set_t set;
  CPU_ZERO(&set);
  if (::sched_getaffinity(0, sizeof set, &set) != 0) return 1;
  return std::max(1, CPU_COUNT(&set));
}

std::string summary(const ActiveComposition* composition) {
  return composition != nullptr ? describe(composition->composition()) : "unmanaged";
}

}  // namespace

std::string_view to_string(ProbeKind kind) { return kind == ProbeKind::Triad ? "triad" : "chase"; }

ProbeKind probe_kind_from_string(std::string_view name) {
  if (name == "triad") return ProbeKind::Triad;
  if (name == "chase") return ProbeKind::Chase;
  throw Error(Errc::InvalidArgument, "unknown probe '" + std::string(name) + "'");
}

std::vector<std::uint32_t> sattolo_cycle(std::size_t n, std::uint64_t seed) {
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::InvalidArgument, "too many chase nodes");
  }
  std::vector<std::uint32_t> next(n);
  std::iota(next.begin(), next.end(), 0u);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 2);
    std::swap(next[i - 1], next[pick(rng)]);
  }
  return next;
}

std::size_t cycle_length(std::span<const std::uint32_t> next, std::uint32_t start) {
  if (next.empty()) return 0;
  std::size_t steps = 0;
  std::uint32_t at = start;
  do {
    at = next[at];
    ++steps;
  } while (at != start && steps <= next.size());
  return steps;
}

ProbeResult triad(const TriadOptions& options, const ActiveComposition* composition) {
  if (options.repetitions < 1) throw Error(Errc::InvalidArgument, "triad needs >= 1 repetition");
  std::size_t n = options.working_set_bytes / (3 * sizeof(double));
  if (n == 0) throw Error(Errc::InvalidArgument, "triad working set too small");

  std::optional<ScopedThreadPolicy> guard;
  if (composition != nullptr) guard.emplace(composition->launch_policy());
  int threads = options.threads > 0 ? options.threads : allowed_cpus();

  // Left uninitialized so that each thread's first touch places its slice.
  std::unique_ptr<double[]> a(new double[n]);
  std::unique_ptr<double[]> b(new double[n]);
  std::unique_ptr<double[]> c(new double[n]);
  const double s = options.scalar;

  ProbeResult result;
  result.kind = ProbeKind::Triad;
  result.composition = summary(composition);
  result.working_set_bytes = 3 * n * sizeof(double);
  result.threads = threads;
  result.repetitions.assign(static_cast<std::size_t>(options.repetitions), 0.0);

  std::barrier sync(threads);
  auto body = [&](int id) {
    std::size_t lo = n * static_cast<std::size_t>(id) / static_cast<std::size_t>(threads);
    std::size_t hi = n * static_cast<std::size_t>(id + 1) / static_cast<std::size_t>(threads);
    for (std::size_t i = lo; i < hi; ++i) {
      a[i] = 0.0;
      b[i] = 2.0;
      c[i] = 0.5;
    }
    sync.arrive_and_wait();
    if (id == 0) result.placement = procfs::read_node_pages(::getpid());
    for (int rep = 0; rep < options.repetitions; ++rep) {
      sync.arrive_and_wait();
      auto t0 = Clock::now();
      for (std::size_t i = lo; i < hi; ++i) a[i] = b[i] + s * c[i];
      sync.arrive_and_wait();
      if (id == 0) {
        std::chrono::duration<double> dt = Clock::now() - t0;
        result.repetitions[static_cast<std::size_t>(rep)] =
            static_cast<double>(result.working_set_bytes) / dt.count() / 1e9;
      }
    }
  };
  {
    std::vector<std::jthread> team;
    for (int id = 1; id < threads; ++id) team.emplace_back(body, id);
    body(0);
  }

  result.value = *std::max_element(result.repetitions.begin(), result.repetitions.end());
  const double expected = 2.0 + s * 0.5;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::abs(a[i] - expected) > 1e-12 * std::abs(expected)) {
      result.valid = false;
      result.note = "result validation failed at element " + std::to_string(i);
      break;
    }
  }
  if (result.valid) {
    result.note = "bytes counted as 3 x 8 per element; write-allocate traffic excluded";
  }
  return result;
}

ProbeResult chase(const ChaseOptions& options, const ActiveComposition* composition) {
  std::size_t n = options.working_set_bytes / kChaseNodeBytes;
  if (n < 2) throw Error(Errc::InvalidArgument, "chase working set too small");

  std::vector<std::uint32_t> order = sattolo_cycle(n, options.seed);

  std::optional<ScopedThreadPolicy> guard;
  if (composition != nullptr) guard.emplace(composition->launch_policy());
  std::unique_ptr<ChaseNode[]> nodes(new ChaseNode[n]);
  for (std::size_t i = 0; i < n; ++i) nodes[i].next = &nodes[order[i]];
  order = {};

  ProbeResult result;
  result.kind = ProbeKind::Chase;
  result.composition = summary(composition);
  result.working_set_bytes = n * kChaseNodeBytes;
  result.threads = 1;
  result.seed = options.seed;
  result.placement = procfs::read_node_pages(::getpid());

  std::uint64_t loads = options.loads > 0 ? options.loads : std::max<std::uint64_t>(2 * n, 1u << 24);
  ChaseNode* p = &nodes[0];
  for (std::size_t i = 0, warm = std::min<std::size_t>(n, 1u << 20); i < warm; ++i) p = p->next;

  auto t0 = Clock::now();
  for (std::uint64_t i = 0; i < loads; ++i) p = p->next;
  std::chrono::duration<double, std::nano> dt = Clock::now() - t0;
  // Keeps the walk observable.
  volatile ChaseNode* sink = p;
  (void)sink;

  result.value = dt.count() / static_cast<double>(loads);
  result.repetitions = {result.value};

  std::uint64_t llc = last_level_cache_bytes();
  if (llc > 0 && result.working_set_bytes < 8 * llc) {
    result.valid = false;
    result.note = "working set below 8x the last-level cache (" + std::to_string(llc) +
                  " bytes); latency is cache-resident";
  } else if (result.value < kCacheResidentNs) {
    result.valid = false;
    result.note = "latency below 10 ns; the walk was served from cache";
  }
  return result;
}

}  // namespace cxlmem
