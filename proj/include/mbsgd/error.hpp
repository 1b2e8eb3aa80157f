#pragma once

#include <stdexcept>
#include <string>

namespace mbsgd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition (non-finite data, bad parameters).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Mismatched vector/matrix dimensions.
class DimensionError : public InputError {
 public:
  using InputError::InputError;
};

/// A quantity the computation needs does not exist (e.g. an all-zero covariance has no smallest nonzero eigenvalue).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Step size or rate outside the contracting regime.
class NonConvergentError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive enumeration would exceed its combinatorial budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// A mathematical invariant that should hold by construction was violated.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries row/column location.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long row, long column)
      : Error(what), row_(row), column_(column) {}
  long row() const noexcept { return row_; }
  long column() const noexcept { return column_; }

 private:
  long row_;
  long column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mbsgd
