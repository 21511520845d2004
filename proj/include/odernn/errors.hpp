#pragma once

#include <stdexcept>
#include <string>
#include <type_traits>

namespace odernn {

// Shape mismatches, malformed configs, out-of-range indices.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Degenerate geometry (zero-length legs, user outside the area).
class InvalidScene : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Non-finite values in a computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Solver gave up: step budget exhausted or step size under the floor.
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw InvalidArgument(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

// Builds the message only on failure; for checks on hot paths.
template <class Message>
  requires std::is_invocable_r_v<std::string, Message>
inline void require(bool condition, Message&& message) {
  if (!condition) throw InvalidArgument(message());
}

}  // namespace odernn
