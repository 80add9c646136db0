#pragma once

#include <sys/wait.h>
#include <unistd.h>

#include <string>
#include <vector>

#include "cxlmem/supervisor.hpp"
#include "cxlmem/topology.hpp"

namespace cxlmem::test {

inline const std::string kToucher = CXLMEM_TEST_TOUCHER;
inline const std::string kCli = CXLMEM_TEST_CLI;

inline Command toucher(std::vector<std::string> args) {
  Command c;
  c.argv = {kToucher};
  c.argv.insert(c.argv.end(), args.begin(), args.end());
  return c;
}

// A pid that is certain not to exist any more.
inline pid_t spawn_and_reap_true() {
  pid_t pid = ::fork();
  if (pid == 0) ::_exit(0);
  ::waitpid(pid, nullptr, 0);
  return pid;
}

// n nodes of 16 GiB with one CPU each; ids 0..n-1.
inline Topology fake_topology(int n) {
  Topology t;
  for (int i = 0; i < n; ++i) {
    t.nodes.push_back({i, 16ull << 30, 12ull << 30, {i}});
  }
  t.cpu_count = n;
  t.kernel_release = "6.1.0-fake";
  return t;
}

}  // namespace cxlmem::test
