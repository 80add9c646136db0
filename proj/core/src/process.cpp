#include "process.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <utility>

#include "cxlmem/error.hpp"

extern char** environ;

namespace cxlmem::detail {
namespace {

enum Stage : int { kPolicyStage = 1, kExecStage = 2, kSetupStage = 3 };

struct ChildFailure {
  int stage;
  int err;
};

void close_fd(int& fd) noexcept {
  if (fd >= 0) {
    ::close(fd);
    fd = -1;
  }
}

[[noreturn]] void child_fail(int fd, int stage, int err) noexcept {
  ChildFailure f{stage, err};
  [[maybe_unused]] ssize_t n = ::write(fd, &f, sizeof f);
  ::_exit(127);
}

std::vector<std::string> build_environment(const Command& command) {
  std::vector<std::string> env;
  for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
    std::string entry = *e;
    auto eq = entry.find('=');
    std::string key = entry.substr(0, eq);
    bool overridden = false;
    for (const auto& [k, v] : command.env) overridden = overridden || k == key;
    if (!overridden) env.push_back(std::move(entry));
  }
  for (const auto& [k, v] : command.env) env.push_back(k + "=" + v);
  return env;
}

std::vector<char*> as_cstrings(std::vector<std::string>& strings) {
  std::vector<char*> out;
  out.reserve(strings.size() + 1);
  for (auto& s : strings) out.push_back(s.data());
  out.push_back(nullptr);
  return out;
}

}  // namespace

ExitInfo decode_siginfo(int code, int status) {
  ExitInfo info;
  if (code == CLD_EXITED) {
    info.exit_status = status;
  } else {
    info.signaled = true;
    info.signal = status;
    info.exit_status = 128 + status;
  }
  return info;
}

ChildProcess ChildProcess::spawn(const Command& command, const SpawnOptions& options) {
  if (command.argv.empty()) throw Error(Errc::SpawnFailure, "empty command");

  // Everything the child touches is prepared before fork.
  std::vector<std::string> argv_storage = command.argv;
  std::vector<std::string> env_storage = build_environment(command);
  std::vector<char*> argv = as_cstrings(argv_storage);
  std::vector<char*> envp = as_cstrings(env_storage);
  LaunchPolicy policy = options.policy != nullptr ? *options.policy : LaunchPolicy{};

  int status[2];
  if (::pipe2(status, O_CLOEXEC) != 0) throw Error(Errc::Io, "pipe2 failed");
  int out[2] = {-1, -1};
  if (options.capture_stdout && ::pipe2(out, O_CLOEXEC) != 0) {
    ::close(status[0]);
    ::close(status[1]);
    throw Error(Errc::Io, "pipe2 failed");
  }

  pid_t pid = ::fork();
  if (pid < 0) {
    int err = errno;
    for (int fd : {status[0], status[1], out[0], out[1]}) {
      if (fd >= 0) ::close(fd);
    }
    throw Error(Errc::SpawnFailure, std::string("fork failed: ") + std::strerror(err));
  }

  if (pid == 0) {
    sigset_t none;
    sigemptyset(&none);
    ::sigprocmask(SIG_SETMASK, &none, nullptr);
    struct sigaction dfl {};
    dfl.sa_handler = SIG_DFL;
    ::sigaction(SIGPIPE, &dfl, nullptr);
    ::sigaction(SIGCHLD, &dfl, nullptr);

    if (out[1] >= 0 && ::dup2(out[1], STDOUT_FILENO) < 0) child_fail(status[1], kSetupStage, errno);
    if (int err = policy.apply_to_calling_thread(); err != 0) child_fail(status[1], kPolicyStage, err);
    if (options.start_stopped) ::raise(SIGSTOP);
    ::execvpe(argv[0], argv.data(), envp.data());
    child_fail(status[1], kExecStage, errno);
  }

  ::close(status[1]);
  if (out[1] >= 0) ::close(out[1]);
  if (out[0] >= 0) ::fcntl(out[0], F_SETFL, ::fcntl(out[0], F_GETFL) | O_NONBLOCK);

  ChildProcess child;
  child.pid_ = pid;
  child.stdout_fd_ = out[0];
  child.status_fd_ = status[0];
  child.program_ = command.argv.front();

  if (options.start_stopped) {
    siginfo_t info{};
    int rc;
    do {
      rc = ::waitid(P_PID, static_cast<id_t>(pid), &info, WSTOPPED | WEXITED);
    } while (rc < 0 && errno == EINTR);
    if (rc == 0 && info.si_code == CLD_STOPPED) return child;
    // It exited before parking: the setup or policy stage failed.
    child.pid_ = -1;
    child.await_exec();
    throw Error(Errc::SpawnFailure, "child exited before start: " + child.program_);
  }
  child.await_exec();
  return child;
}

void ChildProcess::await_exec() {
  ChildFailure failure{};
  ssize_t n;
  do {
    n = ::read(status_fd_, &failure, sizeof failure);
  } while (n < 0 && errno == EINTR);
  close_fd(status_fd_);
  if (n == 0) return;  // CLOEXEC closed the pipe: exec succeeded

  if (pid_ > 0) {
    while (::waitpid(pid_, nullptr, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
  }
  close_fd(stdout_fd_);
  if (n == static_cast<ssize_t>(sizeof failure) && failure.stage == kPolicyStage) {
    throw Error(Errc::CompositionUnsatisfiable,
                "cannot arm memory policy in child: " + std::string(std::strerror(failure.err)));
  }
  std::string why = n == static_cast<ssize_t>(sizeof failure) ? std::strerror(failure.err)
                                                              : "unknown failure";
  throw Error(Errc::SpawnFailure, "cannot execute '" + program_ + "': " + why);
}

void ChildProcess::resume() {
  if (pid_ > 0) ::kill(pid_, SIGCONT);
  if (status_fd_ >= 0) await_exec();
}

void ChildProcess::abandon() noexcept {
  if (pid_ > 0) {
    ::kill(pid_, SIGKILL);
    while (::waitpid(pid_, nullptr, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
  }
  close_fd(status_fd_);
  close_fd(stdout_fd_);
}

void ChildProcess::close_stdout() { close_fd(stdout_fd_); }

ChildProcess::ChildProcess(ChildProcess&& other) noexcept
    : pid_(std::exchange(other.pid_, -1)),
      stdout_fd_(std::exchange(other.stdout_fd_, -1)),
      status_fd_(std::exchange(other.status_fd_, -1)),
      program_(std::move(other.program_)) {}

ChildProcess& ChildProcess::operator=(ChildProcess&& other) noexcept {
  if (this != &other) {
    close_fd(stdout_fd_);
    close_fd(status_fd_);
    pid_ = std::exchange(other.pid_, -1);
    stdout_fd_ = std::exchange(other.stdout_fd_, -1);
    status_fd_ = std::exchange(other.status_fd_, -1);
    program_ = std::move(other.program_);
  }
  return *this;
}

ChildProcess::~ChildProcess() {
  close_fd(stdout_fd_);
  close_fd(status_fd_);
}

}  // namespace cxlmem::detail
