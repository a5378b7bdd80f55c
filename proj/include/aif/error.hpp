#pragma once

#include <stdexcept>
#include <string>

namespace aif {

/// Raised when a caller breaks an operation's precondition (dimension
/// mismatch, out-of-range argument, empty input).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File could not be opened, read, or written. The message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or version-mismatched file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage was started before an upstream artifact existed.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation could not produce its result from the data it was given
/// (e.g. no rewarded episode, expert never reached the goal).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace aif
