#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cim {

/// Malformed edge list, profile or config input.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A structural guarantee of the equilibrium theory was violated at runtime.
/// Raised instead of returning a silently wrong profile.
class ConsistencyError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Best-response iteration did not settle.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace cim
