#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cxlmem {

enum class Errc {
  ProcessGone,
  PermissionDenied,
  ParseError,
  UnsupportedKernel,
  SpawnFailure,
  ChildNeverStopped,
  BadPattern,
  CompositionUnsatisfiable,
  PartialArming,
  EmptyInput,
  MissingBaseline,
  Missing75,
  InvalidArgument,
  Io,
  WorkloadFailed,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Maps an errno from a /proc access to ProcessGone / PermissionDenied / Io.
[[noreturn]] void throw_proc_error(int err, const std::string& path);

// Warnings that do not abort an operation go through here; the default sink
// writes to stderr. Tests may redirect it.
using WarningSink = void (*)(std::string_view);
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);

}  // namespace cxlmem
