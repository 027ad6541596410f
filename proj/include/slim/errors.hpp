#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace slim {

/// Tensor shapes or axes that do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation's precondition (non-scalar loss, SNR with no
/// reduction, duplicate trajectory sample, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad user-supplied data: out-of-range tokens, unknown variants, empty inputs.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite gradients, updates or losses.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace slim
