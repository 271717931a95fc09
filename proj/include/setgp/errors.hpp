#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace setgp {

/// Malformed or inconsistent caller input (dimension mismatch, empty set, bad index...).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base class for failures of the numerical machinery on otherwise valid input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A Cholesky factorization hit a non-positive (or roundoff-level) pivot.
/// `leading_minor()` is the 1-based order of the first leading minor that failed.
class SingularMatrixError : public NumericalError {
 public:
  SingularMatrixError(std::size_t leading_minor, const std::string& what)
      : NumericalError(what), leading_minor_(leading_minor) {}

  std::size_t leading_minor() const noexcept { return leading_minor_; }

 private:
  std::size_t leading_minor_;
};

/// Every hyperparameter candidate produced a singular correlation matrix.
class ExhaustiveSingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// No unevaluated candidate is left in a pool.
class PoolExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed row in a dataset file; `line()` is 1-based.
class ParseError : public InputError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : InputError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace setgp
