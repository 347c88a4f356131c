#pragma once

#include <stdexcept>
#include <string>

namespace hlab {

/// Failure categories. Each maps to a distinct process exit code in the CLI.
enum class ErrorKind {
  configuration,     // malformed scenario / training configuration
  input,             // wrong-shaped or out-of-domain argument
  usage,             // operation invoked in a state that forbids it
  incompatibility,   // checkpoint / scenario / layout mismatch
  diverged,          // non-finite values during training
  validation,        // replayed data disagrees with the log
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::configuration: return "configuration error";
    case ErrorKind::input: return "input error";
    case ErrorKind::usage: return "usage error";
    case ErrorKind::incompatibility: return "incompatibility error";
    case ErrorKind::diverged: return "training diverged";
    case ErrorKind::validation: return "validation failure";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace hlab
