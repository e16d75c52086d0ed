#pragma once

#include <stdexcept>
#include <string>

namespace stagesim {

// Bad user input: flags, config values, workload specs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A function was called outside its mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed profile, trace, or workload file. Carries the 1-based line number
// when one is known (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// The simulation reached a state that the model forbids.
class InvariantViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Analytic queueing result requested for a utilization >= 1.
class OverloadError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace stagesim
