#pragma once

#include <stdexcept>
#include <string>

namespace safetynet {

enum class ErrorKind {
  Shape,
  Domain,
  Config,
  Format,
  Corruption,
  Consistency,
  Numeric,
  Degenerate,
  InsufficientNegatives,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// CLI exit codes: 2 config, 3 data, 4 numeric.
int exit_code_for(ErrorKind kind);

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace safetynet
