#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace horizonlab {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or precondition violation in a call.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Integration or rollout blow-up. `step` is the sample (or rollout) index at
/// which the first non-finite or out-of-range value appeared.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// Euclidean-norm loss evaluated at a zero residual.
class GradientSingularityError : public Error {
 public:
  using Error::Error;
};

class DegenerateMinimumError : public Error {
 public:
  using Error::Error;
};

class StationarityError : public Error {
 public:
  StationarityError(const std::string& what, int horizon) : Error(what), horizon_(horizon) {}
  int horizon() const noexcept { return horizon_; }

 private:
  int horizon_;
};

class BasinMismatchError : public Error {
 public:
  using Error::Error;
};

class IndeterminateRatioError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `row` is 1-based over data rows (header excluded).
class IngestionError : public Error {
 public:
  IngestionError(const std::string& what, std::size_t row)
      : Error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

}  // namespace horizonlab
