#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pixcon {

// Bad argument values: out-of-range labels, negative coefficients, τ <= 0.
class InvalidParameter : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A negative-sampling density with no admissible candidate.
class EmptyDensity : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite activations or losses.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward without a forward cache.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace pixcon
