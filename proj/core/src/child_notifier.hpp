#pragma once

namespace cxlmem::detail {

/// Turns SIGCHLD into readability of an eventfd. The process-wide handler
/// fans every SIGCHLD out to all live notifiers, so independent event loops
/// in different threads each get woken and re-check their own children with
/// waitid(WNOHANG). Wakeups are hints; spurious ones are harmless.
class ChildNotifier {
 public:
  ChildNotifier();
  ~ChildNotifier();
  ChildNotifier(const ChildNotifier&) = delete;
  ChildNotifier& operator=(const ChildNotifier&) = delete;

  // -1 when every slot is taken; callers then fall back to polling.
  int fd() const { return fd_; }
  void drain() const;

 private:
  int slot_ = -1;
  int fd_ = -1;
};

}  // namespace cxlmem::detail
