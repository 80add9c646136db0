#include <gtest/gtest.h>
#include <sys/mman.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cxlmem/error.hpp"
#include "cxlmem/procfs.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace cxlmem;
using nlohmann::json;

namespace {

const fs::path kFixtures = fs::path(CXLMEM_TEST_FIXTURES) / "procfs";

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json expected_values() { return json::parse(slurp(kFixtures / "expected.json")); }

}  // namespace

TEST(ProcfsGolden, CorpusHasAtLeastTenFiles) {
  EXPECT_GE(expected_values().size(), 10u);
}

TEST(ProcfsGolden, EveryFixtureMatchesOracle) {
  const json expected = expected_values();
  auto start = std::chrono::steady_clock::now();
  for (const auto& [name, want] : expected.items()) {
    SCOPED_TRACE(name);
    std::string text = slurp(kFixtures / name);
    bool rollup = name.ends_with(".smaps_rollup");
    if (want.contains("error")) {
      try {
        if (rollup) procfs::parse_smaps_rollup(text);
        else procfs::parse_numa_maps(text, 4);
        ADD_FAILURE() << "expected ParseError";
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::ParseError);
      }
      continue;
    }
    if (rollup) {
      auto r = procfs::parse_smaps_rollup(text);
      EXPECT_EQ(r.stats.rss_kib, want["rss_kib"].get<std::uint64_t>());
      EXPECT_EQ(r.stats.pss_kib, want["pss_kib"].get<std::uint64_t>());
      EXPECT_EQ(r.stats.referenced_kib, want["referenced_kib"].get<std::uint64_t>());
      EXPECT_EQ(r.stats.swap_kib, want["swap_kib"].get<std::uint64_t>());
      EXPECT_EQ(r.empty, want["empty"].get<bool>());
      EXPECT_EQ(r.missing_fields, want["missing_fields"].get<std::vector<std::string>>());
    } else {
      auto pages = procfs::parse_numa_maps(text, 4);
      procfs::NodePages expect;
      for (const auto& [node, count] : want["node_pages"].items()) {
        expect[std::stoi(node)] = count.get<std::uint64_t>();
      }
      EXPECT_EQ(pages, expect);
    }
  }
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::seconds(1));
}

TEST(ProcfsParse, RollupWithoutHeaderLine) {
  auto r = procfs::parse_smaps_rollup("Rss: 10 kB\nPss: 5 kB\nReferenced: 3 kB\nSwap: 0 kB\n");
  EXPECT_EQ(r.stats.rss_kib, 10u);
  EXPECT_EQ(r.stats.pss_kib, 5u);
  EXPECT_TRUE(r.missing_fields.empty());
}

TEST(ProcfsParse, UnknownFieldsAreIgnored) {
  auto r = procfs::parse_smaps_rollup("Rss: 10 kB\nFutureField: 99 kB\nTHPeligible: 0\n");
  EXPECT_EQ(r.stats.rss_kib, 10u);
}

TEST(ProcfsParse, GarbageNeverEscapesAsAnythingButParseError) {
  // Deterministic byte-level mutations of a valid file.
  std::string base = slurp(kFixtures / "kernel-5.15.smaps_rollup");
  std::uint64_t state = 12345;
  for (int i = 0; i < 2000; ++i) {
    std::string text = base;
    for (int k = 0; k < 3; ++k) {
      state = state * 6364136223846793005ull + 1442695040888963407ull;
      text[(state >> 33) % text.size()] = static_cast<char>((state >> 17) & 0x7f);
    }
    try {
      procfs::parse_smaps_rollup(text);
      procfs::parse_numa_maps(text, 4);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::ParseError) << e.what();
    }
  }
}

TEST(ProcfsParse, HugePageCountsBecomeBasePages) {
  auto pages = procfs::parse_numa_maps("7f0000000000 default huge N1=3 kernelpagesize_kB=2048\n", 4);
  EXPECT_EQ(pages.at(1), 3u * 512);
}

TEST(ProcfsKernel, ReleaseParsing) {
  EXPECT_EQ(procfs::parse_kernel_release("6.18.44-fc-v130"), (procfs::KernelVersion{6, 18, 44}));
  EXPECT_EQ(procfs::parse_kernel_release("4.14.0-1.el7"), (procfs::KernelVersion{4, 14, 0}));
  EXPECT_EQ(procfs::parse_kernel_release("5.4"), (procfs::KernelVersion{5, 4, 0}));
  EXPECT_LT(procfs::parse_kernel_release("4.9.337"), procfs::kMinimumKernel);
  EXPECT_THROW(procfs::parse_kernel_release("linux"), Error);
}

TEST(ProcfsLive, SelfReadsAreConsistent) {
  auto s = procfs::read_mem_stats(::getpid());
  EXPECT_GT(s.rss_kib, 0u);
  EXPECT_LE(s.pss_kib, s.rss_kib);
  auto pages = procfs::read_node_pages(::getpid());
  EXPECT_GT(procfs::total_pages(pages), 0u);
}

TEST(ProcfsLive, ClearingReferencedBitsResetsTheCount) {
  const std::size_t bytes = 64u << 20;
  void* p = ::mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  ASSERT_NE(p, MAP_FAILED);
  ::madvise(p, bytes, MADV_NOHUGEPAGE);
  auto* bytes_ptr = static_cast<volatile unsigned char*>(p);
  for (std::size_t i = 0; i < bytes; i += 4096) bytes_ptr[i] = 1;

  procfs::clear_referenced(::getpid());
  auto after_clear = procfs::read_mem_stats(::getpid());
  for (std::size_t i = 0; i < bytes / 2; i += 4096) bytes_ptr[i] = 2;
  auto after_touch = procfs::read_mem_stats(::getpid());
  ::munmap(p, bytes);

  // Half of the 64 MiB region is referenced again; the rest of the process
  // contributes a few MiB at most. The kernel may miss a handful of pages
  // whose accessed bit it has not yet folded in.
  EXPECT_LT(after_clear.referenced_kib, 8u * 1024);
  EXPECT_GE(after_touch.referenced_kib, 31u * 1024);
  EXPECT_LT(after_touch.referenced_kib, 40u * 1024);
}

TEST(ProcfsLive, GoneProcessIsReportedAsSuch) {
  pid_t pid = test::spawn_and_reap_true();
  try {
    procfs::read_mem_stats(pid);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ProcessGone);
  }
}
