#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msb {

/// Bad caller input: shapes, ranges, unknown enum names.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite or otherwise unusable value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulated trajectory left the overflow guard.
class SimulationBlowup : public NumericError {
 public:
  SimulationBlowup(std::size_t trajectory, std::size_t step, double value)
      : NumericError("simulation blowup: trajectory " + std::to_string(trajectory) + " at step " +
                     std::to_string(step) + " reached " + std::to_string(value)),
        trajectory_(trajectory),
        step_(step) {}

  std::size_t trajectory() const noexcept { return trajectory_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t trajectory_;
  std::size_t step_;
};

/// An iterative solver stopped before reaching its tolerance.
class ConvergenceError : public NumericError {
 public:
  ConvergenceError(const std::string& what, double residual)
      : NumericError(what + " (residual " + std::to_string(residual) + ")"), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Stored data does not match its recorded content hash or header.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace msb
