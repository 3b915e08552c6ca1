#pragma once

#include <stdexcept>
#include <string>

namespace tapcam {

// Categories line up with the CLI exit codes and the C API status values.
enum class ErrorKind {
  Usage = 1,       // bad arguments, invalid parameter cards
  Infeasible = 2,  // calibration cannot separate thresholds in the window
  Data = 3,        // malformed input files
  Numeric = 4,     // integrator left the physical voltage range
};

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

}  // namespace tapcam
