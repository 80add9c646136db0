#pragma once

#include <sys/types.h>

#include <string>
#include <vector>

#include "cxlmem/emulator.hpp"
#include "cxlmem/supervisor.hpp"

namespace cxlmem::detail {

struct SpawnOptions {
  const LaunchPolicy* policy = nullptr;
  bool capture_stdout = false;
  // The child stops itself (after arming the policy, before exec) and
  // stays stopped until resume().
  bool start_stopped = false;
};

/// A launched child. spawn() returns once exec succeeded, or, with
/// start_stopped, once the child is parked; resume() then lets it exec.
class ChildProcess {
 public:
  static ChildProcess spawn(const Command& command, const SpawnOptions& options);

  ChildProcess() = default;
  ChildProcess(ChildProcess&& other) noexcept;
  ChildProcess& operator=(ChildProcess&& other) noexcept;
  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;
  ~ChildProcess();

  pid_t pid() const { return pid_; }
  // Read end of the captured stdout pipe, or -1.
  int stdout_fd() const { return stdout_fd_; }
  void close_stdout();

  // Sends SIGCONT to a start_stopped child and waits for its exec result.
  // Throws SpawnFailure (the child is reaped) when exec failed.
  void resume();

  // Kills and reaps a child that never made it to a running state.
  void abandon() noexcept;

 private:
  void await_exec();

  pid_t pid_ = -1;
  int stdout_fd_ = -1;
  int status_fd_ = -1;
  std::string program_;
};

struct ExitInfo {
  int exit_status = 0;
  bool signaled = false;
  int signal = 0;
};

ExitInfo decode_siginfo(int code, int status);

}  // namespace cxlmem::detail
