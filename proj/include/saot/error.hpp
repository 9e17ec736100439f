#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace saot {

// Root of every error raised by the library. The CLI maps the two families
// below onto its exit codes (2 for validation-type, 3 for numeric-type).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Validation family: bad shapes, bad configs, bad files.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigurationError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numeric family: the inputs were well-formed but the computation failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SymmetryError : public NumericError {
 public:
  using NumericError::NumericError;
};

class DeterminismError : public NumericError {
 public:
  using NumericError::NumericError;
};

class MetricError : public NumericError {
 public:
  using NumericError::NumericError;
};

class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, double residual)
      : NumericError(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : NumericError(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace saot
