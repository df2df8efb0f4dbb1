#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advlab {

enum class ErrorKind {
  shape,       // mismatched tensor / layer dimensions
  range,       // argument outside its documented domain
  format,      // malformed file contents
  io,          // filesystem failures
  config,      // bad experiment / network specification
  degenerate,  // input is valid but the computation has no meaningful answer
  state,       // call sequence violated (e.g. backward before forward)
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::range: return "range";
    case ErrorKind::format: return "format";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::state: return "state";
  }
  return "unknown";
}

// Process exit code used by the CLI for each category.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::io: return 3;
    case ErrorKind::format: return 4;
    case ErrorKind::shape: return 5;
    case ErrorKind::range: return 6;
    case ErrorKind::degenerate: return 7;
    case ErrorKind::state: return 8;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace advlab
