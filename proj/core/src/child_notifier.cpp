#include "child_notifier.hpp"

#include <signal.h>
#include <sys/eventfd.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <cstdint>
#include <mutex>
#include <vector>

namespace cxlmem::detail {
namespace {

constexpr std::size_t kSlots = 64;

// Each slot holds an eventfd plus one; zero marks a free slot.
std::array<std::atomic<int>, kSlots> g_slots{};

struct sigaction g_previous {};

// Eventfds are recycled but never closed, so the handler can never write
// into a descriptor number that was reused for something else.
std::mutex g_pool_mutex;
std::vector<int> g_free_fds;

extern "C" void on_sigchld(int signo, siginfo_t* info, void* ctx) {
  int saved_errno = errno;
  const std::uint64_t one = 1;
  for (auto& slot : g_slots) {
    int fd = slot.load(std::memory_order_acquire) - 1;
    if (fd >= 0) {
      [[maybe_unused]] ssize_t n = ::write(fd, &one, sizeof one);
    }
  }
  if ((g_previous.sa_flags & SA_SIGINFO) != 0 && g_previous.sa_sigaction != nullptr) {
    g_previous.sa_sigaction(signo, info, ctx);
  } else if (g_previous.sa_handler != SIG_DFL && g_previous.sa_handler != SIG_IGN &&
             g_previous.sa_handler != nullptr) {
    g_previous.sa_handler(signo);
  }
  errno = saved_errno;
}

void install_handler_once() {
  static std::once_flag once;
  std::call_once(once, [] {
    struct sigaction sa {};
    sa.sa_sigaction = &on_sigchld;
    sa.sa_flags = SA_SIGINFO | SA_RESTART;
    sigemptyset(&sa.sa_mask);
    ::sigaction(SIGCHLD, &sa, &g_previous);
  });
}

}  // namespace

ChildNotifier::ChildNotifier() {
  install_handler_once();
  {
    std::lock_guard lock(g_pool_mutex);
    if (!g_free_fds.empty()) {
      fd_ = g_free_fds.back();
      g_free_fds.pop_back();
    }
  }
  if (fd_ < 0) fd_ = ::eventfd(0, EFD_NONBLOCK | EFD_CLOEXEC);
  if (fd_ < 0) return;
  drain();
  for (std::size_t i = 0; i < kSlots; ++i) {
    int expected = 0;
    if (g_slots[i].compare_exchange_strong(expected, fd_ + 1)) {
      slot_ = static_cast<int>(i);
      return;
    }
  }
  std::lock_guard lock(g_pool_mutex);
  g_free_fds.push_back(fd_);
  fd_ = -1;
}

ChildNotifier::~ChildNotifier() {
  if (slot_ >= 0) g_slots[static_cast<std::size_t>(slot_)].store(0, std::memory_order_release);
  if (fd_ >= 0) {
    std::lock_guard lock(g_pool_mutex);
    g_free_fds.push_back(fd_);
  }
}

void ChildNotifier::drain() const {
  if (fd_ < 0) return;
  std::uint64_t value;
  while (::read(fd_, &value, sizeof value) > 0) {
  }
}

}  // namespace cxlmem::detail
