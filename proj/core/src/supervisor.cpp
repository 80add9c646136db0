#include "cxlmem/supervisor.hpp"

#include <dirent.h>
#include <signal.h>
#include <sys/epoll.h>
#include <sys/timerfd.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <map>
#include <regex>
#include <set>
#include <thread>

#include "child_notifier.hpp"
#include "cxlmem/error.hpp"
#include "process.hpp"

namespace cxlmem {
namespace {

using Clock = std::chrono::steady_clock;

std::int64_t monotonic_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch())
      .count();
}

constexpr std::array<const char*, 5> kRankVariables = {
    "OMPI_COMM_WORLD_RANK", "PMI_RANK", "PMIX_RANK", "MV2_COMM_WORLD_RANK", "SLURM_PROCID"};

// Interval at which stopped-state of non-child targets and new ranks are
// polled; children are reported through SIGCHLD instead.
constexpr int kPollMs = 20;
constexpr int kIdleMs = 200;
constexpr double kTerminateGraceS = 2.0;

void write_all(int fd, const char* data, std::size_t n) {
  while (n > 0) {
    ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR) continue;
      return;
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

char proc_state(pid_t pid) {
  try {
    std::string stat = procfs::read_proc_file("/proc/" + std::to_string(pid) + "/stat");
    auto close = stat.rfind(')');
    if (close == std::string::npos || close + 2 >= stat.size()) return '?';
    return stat[close + 2];
  } catch (const Error&) {
    return 'X';
  }
}

class LineMatcher {
 public:
  explicit LineMatcher(const SamplingPlan& plan) : pattern_(plan.pattern) {
    if (plan.pattern_is_regex) {
      try {
        regex_.emplace(plan.pattern, std::regex::ECMAScript);
      } catch (const std::regex_error& e) {
        throw Error(Errc::BadPattern, "bad pattern '" + plan.pattern + "': " + e.what());
      }
    }
  }

  bool matches(std::string_view line) const {
    if (regex_) return std::regex_search(line.begin(), line.end(), *regex_);
    return line.find(pattern_) != std::string_view::npos;
  }

 private:
  std::string pattern_;
  std::optional<std::regex> regex_;
};

struct Target {
  pid_t pid = -1;
  std::size_t child_index = 0;
  bool direct = true;  // our own child, so stops arrive through waitid
  bool alive = true;
  int stops = 0;
  std::int64_t last_ts = -1;
  Profile profile;
};

struct Child {
  detail::ChildProcess process;
  std::size_t command_index = 0;
  bool exited = false;
  std::int64_t exit_ns = 0;
  detail::ExitInfo exit;
  std::string line_buffer;
  bool discovering = false;
  std::set<pid_t> ranked;  // descendants already turned into targets
};

class JobLoop {
 public:
  JobLoop(std::span<const Command> commands, const SamplingPlan& plan,
          const SupervisorOptions& options)
      : commands_(commands), plan_(plan), options_(options), matcher_(plan) {}

  ~JobLoop() {
    for (auto& child : children_) {
      if (!child.exited) child.process.abandon();
    }
    if (timer_fd_ >= 0) ::close(timer_fd_);
    if (epoll_fd_ >= 0) ::close(epoll_fd_);
  }

  std::vector<Profile> run();

 private:
  void launch();
  void arm_epoll();
  void add_direct_targets();
  bool wants_direct_target(std::size_t command_index) const;
  Target& add_target(pid_t pid, std::size_t child_index, bool direct, int rank);

  std::int64_t now_rel() const { return monotonic_ns() - t0_; }
  bool sample(Target& t, SampleTrigger trigger, bool clear);
  void record_exit_sample(Target& t);
  void on_stopped(Target& t, SampleTrigger trigger, bool match);
  void stop_sample_resume(Target& t);

  void handle_timer();
  void handle_output(Child& child, bool hangup);
  void reap();
  void poll_indirect_stops();
  void discover(Child& child);
  void check_stop_timeout();
  void handle_cancellation();
  bool finished() const;

  std::span<const Command> commands_;
  SamplingPlan plan_;
  const SupervisorOptions& options_;
  LineMatcher matcher_;
  detail::ChildNotifier notifier_;

  std::vector<Child> children_;
  std::vector<Target> targets_;
  int epoll_fd_ = -1;
  int timer_fd_ = -1;
  std::int64_t t0_ = 0;
  std::int64_t terminate_at_ = -1;
  bool any_stop_ = false;
  bool cancelled_ = false;
};

bool JobLoop::wants_direct_target(std::size_t command_index) const {
  if (plan_.discover_ranks) return false;
  if (plan_.rank0_only) return command_index == 0;
  return true;
}

Target& JobLoop::add_target(pid_t pid, std::size_t child_index, bool direct, int rank) {
  Target t;
  t.pid = pid;
  t.child_index = child_index;
  t.direct = direct;
  t.profile.pids = {pid};
  t.profile.command = commands_[children_[child_index].command_index].argv;
  t.profile.rank = rank;
  t.profile.mode = plan_.mode;
  t.profile.period_s = plan_.period_s;
  t.profile.start_monotonic_ns = t0_;
  targets_.push_back(std::move(t));
  Target& added = targets_.back();
  sample(added, SampleTrigger::Start, true);
  return added;
}

bool JobLoop::sample(Target& t, SampleTrigger trigger, bool clear) {
  if (!t.alive) return false;
  Sample s;
  s.trigger = trigger;
  try {
    procfs::RollupParse rollup = procfs::read_rollup(t.pid);
    s.snapshot = rollup.stats;
    s.has_address_space = !rollup.empty;
    if (plan_.sample_node_pages && s.has_address_space) {
      s.snapshot.node_pages = procfs::read_node_pages(t.pid);
    }
    if (clear && s.has_address_space) {
      procfs::clear_referenced(t.pid);
      s.cleared = true;
    }
  } catch (const Error& e) {
    if (e.code() != Errc::ProcessGone) throw;
    record_exit_sample(t);
    return false;
  }
  std::int64_t ts = std::max(now_rel(), t.last_ts + 1);
  s.snapshot.timestamp_ns = ts;
  t.last_ts = ts;
  t.profile.samples.push_back(std::move(s));
  return true;
}

void JobLoop::record_exit_sample(Target& t) {
  if (!t.alive) return;
  t.alive = false;
  Sample s;
  s.trigger = SampleTrigger::Exit;
  s.has_address_space = false;
  std::int64_t ts = std::max(now_rel(), t.last_ts + 1);
  s.snapshot.timestamp_ns = ts;
  t.last_ts = ts;
  t.profile.samples.push_back(std::move(s));
}

// The target is stopped: sample, mark, reset referenced state, resume.
void JobLoop::on_stopped(Target& t, SampleTrigger trigger, bool match) {
  any_stop_ = true;
  PhaseLabel label = PhaseLabel::Interval;
  if (!match) {
    ++t.stops;
    if (t.stops == 1) label = PhaseLabel::InitEnd;
    else if (t.stops == 2) label = PhaseLabel::ComputeEnd;
  }
  if (sample(t, trigger, true)) {
    t.profile.phase_marks.push_back({t.last_ts, label});
  }
  ::kill(t.pid, SIGCONT);
}

void JobLoop::stop_sample_resume(Target& t) {
  if (!t.alive) return;
  if (::kill(t.pid, SIGSTOP) != 0) return;
  if (t.direct) {
    siginfo_t info{};
    int rc;
    do {
      rc = ::waitid(P_PID, static_cast<id_t>(t.pid), &info, WSTOPPED | WEXITED | WNOWAIT);
    } while (rc < 0 && errno == EINTR);
    if (rc != 0 || info.si_code != CLD_STOPPED) return;  // exited; reap() handles it
    siginfo_t consume{};
    ::waitid(P_PID, static_cast<id_t>(t.pid), &consume, WSTOPPED | WNOHANG);
  } else {
    auto deadline = Clock::now() + std::chrono::seconds(2);
    char state;
    while ((state = proc_state(t.pid)) != 'T' && state != 't' && state != 'X' &&
           state != 'Z' && Clock::now() < deadline) {
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
    if (state != 'T' && state != 't') {
      ::kill(t.pid, SIGCONT);
      return;
    }
  }
  on_stopped(t, SampleTrigger::Match, true);
}

void JobLoop::launch() {
  const bool gated = options_.start_gate != nullptr;
  detail::SpawnOptions spawn;
  spawn.policy = options_.policy ? &*options_.policy : nullptr;
  spawn.capture_stdout = plan_.mode == SamplingMode::OutputInterrupt;
  spawn.start_stopped = gated;

  std::exception_ptr failure;
  if (!gated) t0_ = monotonic_ns();
  try {
    for (std::size_t i = 0; i < commands_.size(); ++i) {
      Child child;
      child.command_index = i;
      child.discovering = plan_.discover_ranks;
      child.process = detail::ChildProcess::spawn(commands_[i], spawn);
      children_.push_back(std::move(child));
    }
  } catch (...) {
    failure = std::current_exception();
  }

  if (gated) {
    options_.start_gate->arrive_and_wait();
    t0_ = monotonic_ns();
    if (!failure) {
      try {
        for (auto& child : children_) child.process.resume();
      } catch (...) {
        failure = std::current_exception();
      }
    }
  }
  if (failure) {
    for (auto& child : children_) child.process.abandon();
    children_.clear();
    std::rethrow_exception(failure);
  }
}

void JobLoop::arm_epoll() {
  epoll_fd_ = ::epoll_create1(EPOLL_CLOEXEC);
  if (epoll_fd_ < 0) throw Error(Errc::Io, "epoll_create1 failed");

  auto add = [&](int fd, std::uint64_t tag) {
    struct epoll_event ev {};
    ev.events = EPOLLIN;
    ev.data.u64 = tag;
    if (::epoll_ctl(epoll_fd_, EPOLL_CTL_ADD, fd, &ev) != 0) {
      throw Error(Errc::Io, std::string("epoll_ctl: ") + std::strerror(errno));
    }
  };
  constexpr std::uint64_t kNotifierTag = ~0ull;
  constexpr std::uint64_t kTimerTag = ~0ull - 1;
  if (notifier_.fd() >= 0) add(notifier_.fd(), kNotifierTag);

  if (plan_.mode == SamplingMode::Timer) {
    timer_fd_ = ::timerfd_create(CLOCK_MONOTONIC, TFD_NONBLOCK | TFD_CLOEXEC);
    if (timer_fd_ < 0) throw Error(Errc::Io, "timerfd_create failed");
    auto ns = static_cast<std::int64_t>(std::llround(plan_.period_s * 1e9));
    struct itimerspec spec {};
    spec.it_interval.tv_sec = ns / 1'000'000'000;
    spec.it_interval.tv_nsec = ns % 1'000'000'000;
    // Ticks are phase-locked to the launch instant.
    std::int64_t first = t0_ + ns;
    spec.it_value.tv_sec = first / 1'000'000'000;
    spec.it_value.tv_nsec = first % 1'000'000'000;
    ::timerfd_settime(timer_fd_, TFD_TIMER_ABSTIME, &spec, nullptr);
    add(timer_fd_, kTimerTag);
  }
  for (std::size_t i = 0; i < children_.size(); ++i) {
    if (children_[i].process.stdout_fd() >= 0) add(children_[i].process.stdout_fd(), i);
  }
}

void JobLoop::add_direct_targets() {
  for (std::size_t i = 0; i < children_.size(); ++i) {
    if (wants_direct_target(children_[i].command_index)) {
      add_target(children_[i].process.pid(), i, true, -1);
    }
  }
}

void JobLoop::handle_timer() {
  std::uint64_t expirations = 0;
  if (::read(timer_fd_, &expirations, sizeof expirations) <= 0) return;
  for (auto& t : targets_) sample(t, SampleTrigger::Timer, true);
}

void JobLoop::handle_output(Child& child, bool hangup) {
  int fd = child.process.stdout_fd();
  if (fd < 0) return;
  char buf[65536];
  for (;;) {
    ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN && !hangup) return;
      n = 0;
    }
    if (n == 0) {
      ::epoll_ctl(epoll_fd_, EPOLL_CTL_DEL, fd, nullptr);
      child.process.close_stdout();
      return;
    }
    if (options_.forward_fd >= 0) write_all(options_.forward_fd, buf, static_cast<std::size_t>(n));

    child.line_buffer.append(buf, static_cast<std::size_t>(n));
    std::size_t start = 0;
    std::size_t nl;
    while ((nl = child.line_buffer.find('\n', start)) != std::string::npos) {
      std::string_view line(child.line_buffer.data() + start, nl - start);
      if (!child.exited && matcher_.matches(line)) {
        std::size_t idx = static_cast<std::size_t>(&child - children_.data());
        for (auto& t : targets_) {
          if (t.child_index == idx) stop_sample_resume(t);
        }
      }
      start = nl + 1;
    }
    child.line_buffer.erase(0, start);
  }
}

void JobLoop::reap() {
  for (std::size_t i = 0; i < children_.size(); ++i) {
    Child& child = children_[i];
    while (!child.exited) {
      siginfo_t info{};
      int rc = ::waitid(P_PID, static_cast<id_t>(child.process.pid()), &info,
                        WEXITED | WSTOPPED | WNOHANG);
      if (rc < 0) {
        if (errno == EINTR) continue;
        child.exited = true;  // ECHILD: someone else reaped it
        child.exit_ns = now_rel();
        break;
      }
      if (info.si_pid == 0) break;
      if (info.si_code == CLD_STOPPED) {
        bool handled = false;
        for (auto& t : targets_) {
          if (t.direct && t.pid == info.si_pid) {
            on_stopped(t, SampleTrigger::Stop, false);
            handled = true;
          }
        }
        // Every stop we observe gets exactly one resume.
        if (!handled) ::kill(info.si_pid, SIGCONT);
        continue;
      }
      child.exited = true;
      child.exit_ns = now_rel();
      child.exit = detail::decode_siginfo(info.si_code, info.si_status);
      for (auto& t : targets_) {
        if (t.child_index == i && t.direct) record_exit_sample(t);
      }
    }
  }
}

void JobLoop::poll_indirect_stops() {
  for (auto& t : targets_) {
    if (t.direct || !t.alive) continue;
    char state = proc_state(t.pid);
    if (state == 'T' || state == 't') on_stopped(t, SampleTrigger::Stop, false);
    else if (state == 'X' || state == 'Z') record_exit_sample(t);
  }
}

void JobLoop::discover(Child& child) {
  if (!child.discovering || child.exited) return;
  std::size_t idx = static_cast<std::size_t>(&child - children_.data());
  pid_t root = child.process.pid();

  std::vector<pid_t> candidates = find_descendants(root);
  candidates.insert(candidates.begin(), root);
  for (pid_t pid : candidates) {
    if (child.ranked.contains(pid)) continue;
    auto rank = read_process_rank(pid);
    if (!rank) continue;
    if (plan_.rank0_only && *rank != 0) continue;
    child.ranked.insert(pid);
    add_target(pid, idx, pid == root, *rank);
    if (plan_.rank0_only) {
      child.discovering = false;
      return;
    }
  }

  double elapsed_s = static_cast<double>(now_rel()) / 1e9;
  if (child.ranked.empty() && elapsed_s >= options_.rank_discovery_grace_s) {
    // No MPI runtime detected: the launched process itself is rank 0.
    child.discovering = false;
    child.ranked.insert(root);
    add_target(root, idx, true, 0);
  }
}

void JobLoop::check_stop_timeout() {
  if (plan_.mode != SamplingMode::Interrupt || !plan_.stop_timeout_s || any_stop_) return;
  if (static_cast<double>(now_rel()) / 1e9 < *plan_.stop_timeout_s) return;
  for (auto& child : children_) {
    if (!child.exited) child.process.abandon();
    child.exited = true;
  }
  throw Error(Errc::ChildNeverStopped,
              "no stop observed within " + std::to_string(*plan_.stop_timeout_s) + " s");
}

void JobLoop::handle_cancellation() {
  if (!options_.stop.stop_requested()) return;
  std::int64_t now = now_rel();
  if (!cancelled_) {
    cancelled_ = true;
    terminate_at_ = now + static_cast<std::int64_t>(kTerminateGraceS * 1e9);
    for (auto& child : children_) {
      if (!child.exited) {
        ::kill(child.process.pid(), SIGCONT);
        ::kill(child.process.pid(), SIGTERM);
      }
    }
    for (auto& t : targets_) t.profile.warnings.push_back("terminated by supervisor");
  } else if (now >= terminate_at_) {
    for (auto& child : children_) {
      if (!child.exited) ::kill(child.process.pid(), SIGKILL);
    }
  }
}

bool JobLoop::finished() const {
  return std::all_of(children_.begin(), children_.end(), [](const Child& c) {
    return c.exited && c.process.stdout_fd() < 0;
  });
}

std::vector<Profile> JobLoop::run() {
  launch();
  arm_epoll();
  add_direct_targets();

  constexpr std::uint64_t kTimerTag = ~0ull - 1;
  constexpr std::uint64_t kNotifierTag = ~0ull;
  std::array<struct epoll_event, 16> events{};

  while (!finished()) {
    bool polling = plan_.discover_ranks ||
                   std::any_of(targets_.begin(), targets_.end(),
                               [](const Target& t) { return !t.direct && t.alive; }) ||
                   notifier_.fd() < 0;
    int n = ::epoll_wait(epoll_fd_, events.data(), static_cast<int>(events.size()),
                         polling ? kPollMs : kIdleMs);
    if (n < 0 && errno != EINTR) throw Error(Errc::Io, "epoll_wait failed");
    for (int i = 0; i < std::max(n, 0); ++i) {
      std::uint64_t tag = events[static_cast<std::size_t>(i)].data.u64;
      if (tag == kNotifierTag) {
        notifier_.drain();
      } else if (tag == kTimerTag) {
        handle_timer();
      } else if (tag < children_.size()) {
        bool hangup = (events[static_cast<std::size_t>(i)].events & (EPOLLHUP | EPOLLERR)) != 0;
        handle_output(children_[tag], hangup);
      }
    }
    reap();
    poll_indirect_stops();
    for (auto& child : children_) discover(child);
    check_stop_timeout();
    handle_cancellation();
  }

  std::vector<Profile> profiles;
  for (auto& t : targets_) {
    record_exit_sample(t);
    const Child& child = children_[t.child_index];
    Profile p = std::move(t.profile);
    p.wall_time_s = static_cast<double>(std::max(child.exit_ns, t.last_ts)) / 1e9;
    p.exit_status = child.exit.exit_status;
    p.crashed = child.exit.signaled && !cancelled_;
    p.term_signal = child.exit.signal;
    if (plan_.mode == SamplingMode::Interrupt && t.stops < 2) {
      p.warnings.push_back("interrupt mode saw " + std::to_string(t.stops) + " of 2 stops");
    }
    profiles.push_back(std::move(p));
  }
  return profiles;
}

}  // namespace

std::string_view to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::Timer: return "timer";
    case SamplingMode::Interrupt: return "interrupt";
    case SamplingMode::OutputInterrupt: return "output";
  }
  return "unknown";
}

SamplingMode sampling_mode_from_string(std::string_view name) {
  if (name == "timer") return SamplingMode::Timer;
  if (name == "interrupt") return SamplingMode::Interrupt;
  if (name == "output") return SamplingMode::OutputInterrupt;
  throw Error(Errc::InvalidArgument, "unknown sampling mode '" + std::string(name) + "'");
}

std::string_view to_string(SampleTrigger trigger) {
  switch (trigger) {
    case SampleTrigger::Start: return "start";
    case SampleTrigger::Timer: return "timer";
    case SampleTrigger::Stop: return "stop";
    case SampleTrigger::Match: return "match";
    case SampleTrigger::Exit: return "exit";
  }
  return "unknown";
}

SampleTrigger sample_trigger_from_string(std::string_view name) {
  for (auto t : {SampleTrigger::Start, SampleTrigger::Timer, SampleTrigger::Stop,
                 SampleTrigger::Match, SampleTrigger::Exit}) {
    if (to_string(t) == name) return t;
  }
  throw Error(Errc::ParseError, "unknown sample trigger '" + std::string(name) + "'");
}

std::string_view to_string(PhaseLabel label) {
  switch (label) {
    case PhaseLabel::InitEnd: return "init_end";
    case PhaseLabel::ComputeEnd: return "compute_end";
    case PhaseLabel::Interval: return "interval";
  }
  return "unknown";
}

PhaseLabel phase_label_from_string(std::string_view name) {
  for (auto l : {PhaseLabel::InitEnd, PhaseLabel::ComputeEnd, PhaseLabel::Interval}) {
    if (to_string(l) == name) return l;
  }
  throw Error(Errc::ParseError, "unknown phase label '" + std::string(name) + "'");
}

std::size_t Profile::count(SampleTrigger trigger) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(), [&](const Sample& s) { return s.trigger == trigger; }));
}

void validate(const SamplingPlan& plan) {
  if (!(plan.period_s > 0.0) || !std::isfinite(plan.period_s)) {
    throw Error(Errc::InvalidArgument, "sampling period must be > 0");
  }
  if (plan.rank0_only && plan.sample_all_processes) {
    throw Error(Errc::InvalidArgument, "rank0_only and sample_all_processes are exclusive");
  }
  bool output = plan.mode == SamplingMode::OutputInterrupt;
  if (output && plan.pattern.empty()) {
    throw Error(Errc::InvalidArgument, "output-interrupt mode needs a pattern");
  }
  if (!output && !plan.pattern.empty()) {
    throw Error(Errc::InvalidArgument, "a pattern is only meaningful in output-interrupt mode");
  }
  if (plan.stop_timeout_s && !(*plan.stop_timeout_s > 0.0)) {
    throw Error(Errc::InvalidArgument, "stop timeout must be > 0");
  }
  if (output) LineMatcher check(plan);
}

std::vector<Profile> supervise_job(std::span<const Command> commands, const SamplingPlan& plan,
                                   const SupervisorOptions& options) {
  validate(plan);
  if (commands.empty()) throw Error(Errc::InvalidArgument, "no commands to supervise");
  procfs::require_supported_kernel();
  JobLoop loop(commands, plan, options);
  return loop.run();
}

Profile run_profiled(const Command& command, const SamplingPlan& plan,
                     const ActiveComposition* composition) {
  SupervisorOptions options;
  if (composition != nullptr) options.policy = composition->launch_policy();
  auto profiles = supervise_job(std::span(&command, 1), plan, options);
  if (profiles.empty()) throw Error(Errc::SpawnFailure, "no process was sampled");
  return std::move(profiles.front());
}

Profile run_interrupt_mode(const Command& command, const SamplingPlan& plan) {
  if (plan.mode != SamplingMode::Interrupt) {
    throw Error(Errc::InvalidArgument, "run_interrupt_mode needs an interrupt-mode plan");
  }
  return run_profiled(command, plan);
}

Profile run_output_interrupt(const Command& command, const SamplingPlan& plan) {
  if (plan.mode != SamplingMode::OutputInterrupt) {
    throw Error(Errc::InvalidArgument, "run_output_interrupt needs an output-mode plan");
  }
  return run_profiled(command, plan);
}

PlainRun run_unsupervised(const Command& command, const LaunchPolicy* policy) {
  detail::SpawnOptions spawn;
  spawn.policy = policy;
  auto start = Clock::now();
  detail::ChildProcess child = detail::ChildProcess::spawn(command, spawn);
  siginfo_t info{};
  int rc;
  do {
    rc = ::waitid(P_PID, static_cast<id_t>(child.pid()), &info, WEXITED);
  } while (rc < 0 && errno == EINTR);
  auto end = Clock::now();
  detail::ExitInfo exit = detail::decode_siginfo(info.si_code, info.si_status);
  return {std::chrono::duration<double>(end - start).count(), exit.exit_status, exit.signaled};
}

std::vector<pid_t> find_descendants(pid_t root) {
  std::multimap<pid_t, pid_t> children_of;
  DIR* dir = ::opendir("/proc");
  if (dir == nullptr) return {};
  while (struct dirent* entry = ::readdir(dir)) {
    char* end = nullptr;
    long pid = std::strtol(entry->d_name, &end, 10);
    if (end == entry->d_name || *end != '\0') continue;
    std::string stat;
    try {
      stat = procfs::read_proc_file("/proc/" + std::string(entry->d_name) + "/stat");
    } catch (const Error&) {
      continue;
    }
    auto close = stat.rfind(')');
    if (close == std::string::npos) continue;
    // ") S ppid ..."
    int ppid = 0;
    if (std::sscanf(stat.c_str() + close + 1, " %*c %d", &ppid) != 1) continue;
    children_of.emplace(ppid, static_cast<pid_t>(pid));
  }
  ::closedir(dir);

  std::vector<pid_t> out;
  std::vector<pid_t> frontier{root};
  while (!frontier.empty()) {
    pid_t p = frontier.back();
    frontier.pop_back();
    auto [lo, hi] = children_of.equal_range(p);
    for (auto it = lo; it != hi; ++it) {
      out.push_back(it->second);
      frontier.push_back(it->second);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<int> read_process_rank(pid_t pid) {
  std::string environ;
  try {
    environ = procfs::read_proc_file("/proc/" + std::to_string(pid) + "/environ");
  } catch (const Error&) {
    return std::nullopt;
  }
  std::size_t pos = 0;
  while (pos < environ.size()) {
    std::size_t end = environ.find('\0', pos);
    if (end == std::string::npos) end = environ.size();
    std::string_view entry(environ.data() + pos, end - pos);
    for (const char* var : kRankVariables) {
      std::string_view name(var);
      if (entry.size() > name.size() && entry.substr(0, name.size()) == name &&
          entry[name.size()] == '=') {
        try {
          return std::stoi(std::string(entry.substr(name.size() + 1)));
        } catch (const std::exception&) {
          return std::nullopt;
        }
      }
    }
    pos = end + 1;
  }
  return std::nullopt;
}

}  // namespace cxlmem
