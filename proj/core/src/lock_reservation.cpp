#include <fcntl.h>
#include <numaif.h>
#include <poll.h>
#include <signal.h>
#include <sys/mman.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <cstring>
#include <utility>

#include "cxlmem/emulator.hpp"
#include "cxlmem/error.hpp"

namespace cxlmem {
namespace {

constexpr char kReady = 'R';

void write_all(int fd, const void* data, std::size_t n) noexcept {
  const char* p = static_cast<const char*>(data);
  while (n > 0) {
    ssize_t w = ::write(fd, p, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      return;
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// Runs in the forked holder. Only async-signal-safe calls from here on.
[[noreturn]] void hold_locked_memory(int node, std::uint64_t bytes, int status_fd,
                                     int keepalive_fd) noexcept {
  // Drop every inherited descriptor except our two pipes, so an earlier
  // holder's keepalive pipe never stays open through us.
  for (int fd = 3; fd < 4096; ++fd) {
    if (fd != status_fd && fd != keepalive_fd) ::close(fd);
  }
  ::signal(SIGCHLD, SIG_DFL);

  std::array<unsigned long, LaunchPolicy::kMaskWords> mask{};
  constexpr std::size_t bits = 8 * sizeof(unsigned long);
  mask[static_cast<std::size_t>(node) / bits] |= 1ul << (static_cast<std::size_t>(node) % bits);
  int err = 0;
  if (::set_mempolicy(MPOL_BIND, mask.data(), LaunchPolicy::kMaskBits + 1) != 0) err = errno;

  void* region = MAP_FAILED;
  if (err == 0) {
    region = ::mmap(nullptr, bytes, PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0);
    if (region == MAP_FAILED) err = errno;
  }
  // mlock faults every page in, so the reservation is resident on return.
  if (err == 0 && ::mlock(region, bytes) != 0) err = errno;

  if (err != 0) {
    write_all(status_fd, &err, sizeof err);
    ::_exit(1);
  }
  write_all(status_fd, &kReady, 1);
  ::close(status_fd);

  // Block until the owner closes its end (release) or dies.
  char c;
  while (::read(keepalive_fd, &c, 1) < 0 && errno == EINTR) {
  }
  ::_exit(0);
}

}  // namespace

void ensure_lockable(std::uint64_t bytes) {
  struct rlimit lim {};
  if (::getrlimit(RLIMIT_MEMLOCK, &lim) != 0) return;
  if (lim.rlim_cur == RLIM_INFINITY || lim.rlim_cur >= bytes) return;
  if (lim.rlim_max == RLIM_INFINITY || lim.rlim_max >= bytes) {
    struct rlimit raised = lim;
    raised.rlim_cur = lim.rlim_max;
    if (::setrlimit(RLIMIT_MEMLOCK, &raised) == 0) return;
  }
  // CAP_IPC_LOCK bypasses the limit.
  if (::geteuid() == 0) return;
  throw Error(Errc::CompositionUnsatisfiable,
              "cannot lock " + std::to_string(bytes / 1024) +
                  " KiB: RLIMIT_MEMLOCK is " + std::to_string(lim.rlim_cur / 1024) +
                  " KiB (hard " +
                  (lim.rlim_max == RLIM_INFINITY ? std::string("unlimited")
                                                 : std::to_string(lim.rlim_max / 1024)) +
                  " KiB). Raise it with `ulimit -l` / limits.conf memlock, or grant "
                  "CAP_IPC_LOCK.");
}

LockReservation reserve_locked_memory(int node, std::uint64_t bytes,
                                      std::chrono::seconds timeout) {
  if (bytes == 0) throw Error(Errc::InvalidArgument, "lock reservation of 0 bytes");
  if (node < 0 || static_cast<std::size_t>(node) >= LaunchPolicy::kMaskBits) {
    throw Error(Errc::InvalidArgument, "bad node id");
  }
  ensure_lockable(bytes);

  int status[2];
  int keepalive[2];
  if (::pipe2(status, O_CLOEXEC) != 0) throw Error(Errc::Io, "pipe2 failed");
  if (::pipe2(keepalive, O_CLOEXEC) != 0) {
    ::close(status[0]);
    ::close(status[1]);
    throw Error(Errc::Io, "pipe2 failed");
  }

  pid_t pid = ::fork();
  if (pid < 0) {
    int err = errno;
    for (int fd : {status[0], status[1], keepalive[0], keepalive[1]}) ::close(fd);
    throw Error(Errc::CompositionUnsatisfiable,
                std::string("fork of lock holder failed: ") + std::strerror(err));
  }
  if (pid == 0) {
    hold_locked_memory(node, bytes, status[1], keepalive[0]);
  }
  ::close(status[1]);
  ::close(keepalive[0]);

  LockReservation lock;
  lock.node_ = node;
  lock.bytes_ = bytes;
  lock.holder_ = pid;
  lock.keepalive_fd_ = keepalive[1];

  struct pollfd pfd {status[0], POLLIN, 0};
  int ready = 0;
  do {
    ready = ::poll(&pfd, 1, static_cast<int>(timeout.count() * 1000));
  } while (ready < 0 && errno == EINTR);

  char buf[sizeof(int)] = {};
  ssize_t n = ready > 0 ? ::read(status[0], buf, sizeof buf) : -1;
  ::close(status[0]);

  if (n == 1 && buf[0] == kReady) return lock;

  std::string why = "timed out";
  if (n == static_cast<ssize_t>(sizeof(int))) {
    int err = 0;
    std::memcpy(&err, buf, sizeof err);
    why = std::strerror(err);
  } else if (n == 0) {
    why = "lock holder exited";
  }
  lock.release();
  throw Error(Errc::CompositionUnsatisfiable,
              "locking " + std::to_string(bytes / 1024) + " KiB on node " +
                  std::to_string(node) + " failed: " + why);
}

LockReservation::LockReservation(LockReservation&& other) noexcept
    : node_(other.node_),
      bytes_(other.bytes_),
      holder_(std::exchange(other.holder_, -1)),
      keepalive_fd_(std::exchange(other.keepalive_fd_, -1)) {}

LockReservation& LockReservation::operator=(LockReservation&& other) noexcept {
  if (this != &other) {
    release();
    node_ = other.node_;
    bytes_ = other.bytes_;
    holder_ = std::exchange(other.holder_, -1);
    keepalive_fd_ = std::exchange(other.keepalive_fd_, -1);
  }
  return *this;
}

LockReservation::~LockReservation() { release(); }

void LockReservation::release() noexcept {
  if (keepalive_fd_ >= 0) {
    ::close(keepalive_fd_);
    keepalive_fd_ = -1;
  }
  if (holder_ > 0) {
    ::kill(holder_, SIGKILL);
    // Waiting for the exit means the memory is back on the node's free list.
    while (::waitpid(holder_, nullptr, 0) < 0 && errno == EINTR) {
    }
    holder_ = -1;
  }
}

}  // namespace cxlmem
