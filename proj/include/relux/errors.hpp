#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relux {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument violates a precondition (c <= 0, T <= 0, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix length does not match what the receiver expects.
class DimensionError : public Error {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : Error(what + ": expected length " + std::to_string(expected) + ", got " +
              std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Malformed model file, wire message or numeric token.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Transport-level failure talking to a remote oracle.
class OracleError : public Error {
 public:
  using Error::Error;
};

/// The query limit configured on an oracle handle was reached.
class BudgetExhausted : public Error {
 public:
  using Error::Error;
};

/// Unrecoverable failure inside a numerical procedure (rank deficiency,
/// non-finite values, divergence that could not be repaired).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace relux
