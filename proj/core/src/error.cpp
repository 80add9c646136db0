#include "cxlmem/error.hpp"

#include <atomic>
#include <cerrno>
#include <cstring>
#include <iostream>

namespace cxlmem {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::ProcessGone: return "ProcessGone";
    case Errc::PermissionDenied: return "PermissionDenied";
    case Errc::ParseError: return "ParseError";
    case Errc::UnsupportedKernel: return "UnsupportedKernel";
    case Errc::SpawnFailure: return "SpawnFailure";
    case Errc::ChildNeverStopped: return "ChildNeverStopped";
    case Errc::BadPattern: return "BadPattern";
    case Errc::CompositionUnsatisfiable: return "CompositionUnsatisfiable";
    case Errc::PartialArming: return "PartialArming";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MissingBaseline: return "MissingBaseline";
    case Errc::Missing75: return "Missing75";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::WorkloadFailed: return "WorkloadFailed";
  }
  return "Unknown";
}

void throw_proc_error(int err, const std::string& path) {
  switch (err) {
    case ENOENT:
    case ESRCH:
      throw Error(Errc::ProcessGone, path + ": process is gone");
    case EACCES:
    case EPERM:
      throw Error(Errc::PermissionDenied, path + ": " + std::strerror(err));
    default:
      throw Error(Errc::Io, path + ": " + std::strerror(err));
  }
}

namespace {

void stderr_sink(std::string_view message) {
  std::cerr << "cxlmem: warning: " << message << '\n';
}

std::atomic<WarningSink> g_sink{&stderr_sink};

}  // namespace

void set_warning_sink(WarningSink sink) {
  g_sink.store(sink != nullptr ? sink : &stderr_sink);
}

void warn(std::string_view message) { g_sink.load()(message); }

}  // namespace cxlmem
