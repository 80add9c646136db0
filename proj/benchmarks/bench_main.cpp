#include <benchmark/benchmark.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "cxlmem/metrics.hpp"
#include "cxlmem/probes.hpp"
#include "cxlmem/procfs.hpp"

using namespace cxlmem;

namespace {

std::string fixture(const char* name) {
  std::ifstream in(std::string(CXLMEM_BENCH_FIXTURES) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Profile synthetic_profile(int samples) {
  Profile p;
  for (int i = 0; i < samples; ++i) {
    Sample s;
    s.snapshot.timestamp_ns = static_cast<std::int64_t>(i) * 1'000'000'000;
    s.snapshot.rss_kib = 1u << 20;
    s.snapshot.pss_kib = 1u << 19;
    s.snapshot.referenced_kib = static_cast<std::uint64_t>(i % 97) << 10;
    s.snapshot.node_pages = {{0, 1u << 17}, {1, 1u << 17}};
    s.cleared = true;
    p.samples.push_back(s);
  }
  return p;
}

}  // namespace

static void BM_ParseSmapsRollup(benchmark::State& state) {
  std::string text = fixture("live-6.18-python.smaps_rollup");
  for (auto _ : state) benchmark::DoNotOptimize(procfs::parse_smaps_rollup(text));
}
BENCHMARK(BM_ParseSmapsRollup);

static void BM_ParseNumaMaps(benchmark::State& state) {
  std::string text = fixture("live-6.18-python.numa_maps");
  for (auto _ : state) benchmark::DoNotOptimize(procfs::parse_numa_maps(text, 4));
}
BENCHMARK(BM_ParseNumaMaps);

// One full sample of the calling process, as the supervisor takes it.
static void BM_ReadSelf(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(procfs::read_mem_stats(::getpid()));
    benchmark::DoNotOptimize(procfs::read_node_pages(::getpid()));
  }
}
BENCHMARK(BM_ReadSelf);

static void BM_Derive(benchmark::State& state) {
  Profile p = synthetic_profile(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(derive(p));
}
BENCHMARK(BM_Derive)->Arg(60)->Arg(3600);

static void BM_Aggregate(benchmark::State& state) {
  std::vector<Profile> ps(static_cast<std::size_t>(state.range(0)), synthetic_profile(600));
  for (auto _ : state) benchmark::DoNotOptimize(aggregate(ps, AggregateBasis::Pss));
}
BENCHMARK(BM_Aggregate)->Arg(2)->Arg(16);

static void BM_Sattolo(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(sattolo_cycle(static_cast<std::size_t>(state.range(0)), 42));
  }
}
BENCHMARK(BM_Sattolo)->Arg(1 << 16)->Arg(1 << 22);

// libbenchmark_main.a ships as LTO bytecode from another compiler release.
BENCHMARK_MAIN();
