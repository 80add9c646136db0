// Synthetic workloads with known memory behavior, used as oracles by the
// acceptance suite and as stand-ins for real applications in examples.

#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "../common/byte_size.hpp"
#include "cxlmem/selfstop.h"

namespace {

using Clock = std::chrono::steady_clock;
using cxlmem::tools::parse_byte_size;

const std::size_t kPage = static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));

struct Mapping {
  unsigned char* data = nullptr;
  std::size_t bytes = 0;
  std::size_t pages() const { return bytes / kPage; }
};

Mapping map_buffer(std::uint64_t bytes, const std::string& shared_file) {
  bytes = (bytes + kPage - 1) / kPage * kPage;
  void* p = MAP_FAILED;
  if (shared_file.empty()) {
    p = ::mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
  } else {
    int fd = ::open(shared_file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0600);
    if (fd < 0 || ::ftruncate(fd, static_cast<off_t>(bytes)) != 0) {
      std::perror(shared_file.c_str());
      std::exit(2);
    }
    p = ::mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    ::close(fd);
  }
  if (p == MAP_FAILED) {
    std::perror("mmap");
    std::exit(2);
  }
  // Referenced accounting is per base page; keep huge pages out of it.
  ::madvise(p, bytes, MADV_NOHUGEPAGE);
  return {static_cast<unsigned char*>(p), bytes};
}

void touch_pages(const Mapping& m, std::size_t first, std::size_t count) {
  volatile unsigned char* base = m.data;
  for (std::size_t i = first; i < first + count; ++i) {
    base[i * kPage] = static_cast<unsigned char>(base[i * kPage] + 1);
  }
}

void sleep_s(double s) {
  if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

int run_touch(const std::string& size, double fraction, double compute_s, bool self_stop,
              const std::string& shared_file, double hold_s) {
  Mapping m = map_buffer(parse_byte_size(size), shared_file);
  touch_pages(m, 0, m.pages());
  if (self_stop) cxlmem_phase_boundary();

  auto hot = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m.pages())));
  auto until = Clock::now() + std::chrono::duration<double>(compute_s);
  do {
    touch_pages(m, 0, hot);
    if (hot == 0) sleep_s(std::min(compute_s, 0.05));
  } while (Clock::now() < until);

  if (self_stop) cxlmem_phase_boundary();
  sleep_s(hold_s);
  return 0;
}

// Touches `rate` bytes of distinct pages per second, cycling through the
// buffer in 10 ms slices.
int run_rate(const std::string& size, const std::string& rate, double duration_s, bool self_stop) {
  Mapping m = map_buffer(parse_byte_size(size), "");
  touch_pages(m, 0, m.pages());
  if (self_stop) cxlmem_phase_boundary();

  constexpr double kSlice = 0.01;
  double pages_per_slice = static_cast<double>(parse_byte_size(rate)) / kPage * kSlice;
  double carry = 0.0;
  std::size_t cursor = 0;
  auto start = Clock::now();
  auto next = start;
  while (Clock::now() - start < std::chrono::duration<double>(duration_s)) {
    carry += pages_per_slice;
    auto n = static_cast<std::size_t>(carry);
    carry -= static_cast<double>(n);
    while (n > 0) {
      std::size_t chunk = std::min(n, m.pages() - cursor);
      touch_pages(m, cursor, chunk);
      cursor = (cursor + chunk) % m.pages();
      n -= chunk;
    }
    next += std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(kSlice));
    std::this_thread::sleep_until(next);
  }
  if (self_stop) cxlmem_phase_boundary();
  return 0;
}

int run_spin(std::uint64_t iterations, double seconds) {
  std::uint64_t x = 0x9e3779b97f4a7c15ull;
  auto step = [&x] {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
  };
  if (iterations > 0) {
    for (std::uint64_t i = 0; i < iterations; ++i) step();
  } else {
    auto until = Clock::now() + std::chrono::duration<double>(seconds);
    while (Clock::now() < until) {
      for (int i = 0; i < 1 << 20; ++i) step();
    }
  }
  std::printf("spin %llu\n", static_cast<unsigned long long>(x));
  return 0;
}

int run_stream(const std::string& size, int passes, double seconds) {
  std::size_t n = parse_byte_size(size) / (3 * sizeof(double));
  std::vector<double> a(n, 0.0), b(n, 2.0), c(n, 0.5);
  auto pass = [&] {
    for (std::size_t i = 0; i < n; ++i) a[i] = b[i] + 3.0 * c[i];
  };
  if (passes > 0) {
    for (int p = 0; p < passes; ++p) pass();
  } else {
    auto until = Clock::now() + std::chrono::duration<double>(seconds);
    do pass();
    while (Clock::now() < until);
  }
  std::printf("stream %.1f\n", n > 0 ? a[n / 2] : 0.0);
  return 0;
}

int run_steps(int steps, int step_ms, const std::string& grow, const std::string& marker) {
  std::vector<std::unique_ptr<unsigned char[]>> blocks;
  std::uint64_t grow_bytes = parse_byte_size(grow);
  for (int k = 1; k <= steps; ++k) {
    if (grow_bytes > 0) {
      blocks.emplace_back(new unsigned char[grow_bytes]);
      std::memset(blocks.back().get(), k, grow_bytes);
    }
    std::printf("%s %d\n", marker.c_str(), k);
    std::fflush(stdout);
    std::this_thread::sleep_for(std::chrono::milliseconds(step_ms));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic memory workloads with known access patterns"};
  app.require_subcommand(1);

  std::string size = "1G", shared_file, rate = "1G", grow = "0", marker = "STEP";
  double fraction = 1.0, compute_s = 1.0, hold_s = 0.0, duration_s = 5.0, seconds = 0.0;
  bool self_stop = false;
  std::uint64_t iterations = 0;
  int passes = 0, steps = 5, step_ms = 200;

  auto* touch = app.add_subcommand("touch", "fault in a buffer, then touch a fraction of it");
  touch->add_option("--size", size, "buffer size")->capture_default_str();
  touch->add_option("--fraction", fraction, "share of pages touched during compute")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  touch->add_option("--compute-s", compute_s, "length of the compute phase")->capture_default_str();
  touch->add_flag("--self-stop", self_stop, "stop at init_end and compute_end");
  touch->add_option("--shared-file", shared_file, "map this file MAP_SHARED instead");
  touch->add_option("--hold-s", hold_s, "stay resident this long before exiting");

  auto* rate_cmd = app.add_subcommand("rate", "touch distinct pages at a fixed rate");
  rate_cmd->add_option("--size", size, "buffer cycled through")->capture_default_str();
  rate_cmd->add_option("--rate", rate, "bytes of distinct pages per second")->capture_default_str();
  rate_cmd->add_option("--duration-s", duration_s)->capture_default_str();
  rate_cmd->add_flag("--self-stop", self_stop, "stop before and after the timed phase");

  auto* spin = app.add_subcommand("spin", "CPU-bound loop with a tiny footprint");
  spin->add_option("--iterations", iterations, "fixed amount of work");
  spin->add_option("--seconds", seconds, "run for a fixed time instead");

  auto* stream = app.add_subcommand("stream", "triad passes over three arrays");
  stream->add_option("--size", size, "total of the three arrays")->capture_default_str();
  stream->add_option("--passes", passes, "fixed amount of work");
  stream->add_option("--seconds", seconds, "run for a fixed time instead");

  auto* steps_cmd = app.add_subcommand("steps", "print a marker line per step, growing memory");
  steps_cmd->add_option("--steps", steps)->capture_default_str();
  steps_cmd->add_option("--step-ms", step_ms)->capture_default_str();
  steps_cmd->add_option("--grow", grow, "bytes allocated per step")->capture_default_str();
  steps_cmd->add_option("--marker", marker)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (touch->parsed()) return run_touch(size, fraction, compute_s, self_stop, shared_file, hold_s);
    if (rate_cmd->parsed()) return run_rate(size, rate, duration_s, self_stop);
    if (spin->parsed()) return run_spin(iterations, seconds > 0 ? seconds : 1.0);
    if (stream->parsed()) return run_stream(size, passes, seconds > 0 ? seconds : 1.0);
    if (steps_cmd->parsed()) return run_steps(steps, step_ms, grow, marker);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "cxlmem-toucher: %s\n", e.what());
    return 1;
  }
  return 1;
}
