#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace masred {

enum class ErrorKind {
  io,
  format,
  range,
  invalid_argument,
  protocol,
  oracle_terminated,
  timeout,
  divergence,
  state,
};

std::string_view to_string(ErrorKind kind);

// Domain error carrying a machine-readable kind; the CLI prints it as a
// single "error[<kind>]: <message>" line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace masred
