#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deepwarp {

// Invalid model or run configuration (bad hyperparameters, unknown keys, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of a function (negative distance, z <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Base for failures of the numerical machinery during evaluation or fitting.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CholeskyError : public NumericalError {
 public:
  explicit CholeskyError(const std::string& what, double jitter = 0.0)
      : NumericalError(what), jitter_(jitter) {}
  double jitter() const { return jitter_; }

 private:
  double jitter_;
};

// Non-positive conditional variance (or similar) at a specific index.
class ConditioningError : public NumericalError {
 public:
  ConditioningError(const std::string& what, std::size_t index)
      : NumericalError(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

// Moebius denominator vanishes at an input location.
class PoleError : public NumericalError {
 public:
  PoleError(const std::string& what, double x, double y)
      : NumericalError(what + " at (" + std::to_string(x) + ", " + std::to_string(y) + ")"),
        x_(x),
        y_(y) {}
  double x() const { return x_; }
  double y() const { return y_; }

 private:
  double x_;
  double y_;
};

// Requested operation is not available for this model kind.
class UnsupportedError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace deepwarp
