#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uvfield {

/// Precondition or argument contract was broken by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A forward value, loss term or gradient became non-finite.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& what, long iteration = -1, std::string term = {})
      : std::runtime_error(what), iteration_(iteration), term_(std::move(term)) {}

  long iteration() const noexcept { return iteration_; }
  const std::string& term() const noexcept { return term_; }

 private:
  long iteration_;
  std::string term_;
};

/// Checkpoint magic/version mismatch or truncated data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Model and mesh were not produced under the same normalization.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace uvfield
