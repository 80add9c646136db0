#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "cxlmem/error.hpp"
#include "cxlmem/probes.hpp"
#include "cxlmem/topology.hpp"

using namespace cxlmem;

TEST(Sattolo, AlwaysOneCycleThroughEveryElement) {
  for (std::size_t n : {2u, 3u, 17u, 1000u, 65537u}) {
    for (std::uint64_t seed : {1ull, 2ull, 0x5eedull}) {
      auto next = sattolo_cycle(n, seed);
      ASSERT_EQ(next.size(), n);
      EXPECT_EQ(cycle_length(next), n);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NE(next[i], i);
      auto sorted = next;
      std::sort(sorted.begin(), sorted.end());
      std::vector<std::uint32_t> iota(n);
      std::iota(iota.begin(), iota.end(), 0u);
      EXPECT_EQ(sorted, iota);
    }
  }
}

TEST(Sattolo, SeedIsReproducible) {
  EXPECT_EQ(sattolo_cycle(4096, 9), sattolo_cycle(4096, 9));
  EXPECT_NE(sattolo_cycle(4096, 9), sattolo_cycle(4096, 10));
}

TEST(Triad, SmallRunValidatesAndReportsBandwidth) {
  TriadOptions o;
  o.working_set_bytes = 48ull << 20;
  o.repetitions = 3;
  o.threads = 1;
  ProbeResult r = triad(o);
  EXPECT_EQ(r.kind, ProbeKind::Triad);
  EXPECT_TRUE(r.valid) << r.note;
  EXPECT_GT(r.value, 0.1);
  EXPECT_EQ(r.repetitions.size(), 3u);
  EXPECT_DOUBLE_EQ(r.value, *std::max_element(r.repetitions.begin(), r.repetitions.end()));
  EXPECT_GT(procfs::total_pages(r.placement), 0u);
}

TEST(Triad, RejectsDegenerateOptions) {
  TriadOptions o;
  o.working_set_bytes = 16;
  EXPECT_THROW(triad(o), Error);
  o.working_set_bytes = 1 << 20;
  o.repetitions = 0;
  EXPECT_THROW(triad(o), Error);
}

TEST(Chase, CacheResidentWorkingSetIsFlaggedInvalid) {
  ChaseOptions o;
  o.working_set_bytes = 1 << 20;
  o.loads = 1 << 20;
  ProbeResult r = chase(o);
  EXPECT_EQ(r.kind, ProbeKind::Chase);
  EXPECT_FALSE(r.valid);
  EXPECT_FALSE(r.note.empty());
  EXPECT_GT(r.value, 0.0);
  EXPECT_EQ(r.seed, o.seed);
}

TEST(ProbeKindNames, RoundTrip) {
  for (ProbeKind k : {ProbeKind::Triad, ProbeKind::Chase}) {
    EXPECT_EQ(probe_kind_from_string(to_string(k)), k);
  }
  EXPECT_THROW(probe_kind_from_string("stream"), Error);
}
