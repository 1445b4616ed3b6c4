#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "msb/errors.hpp"

namespace msb {

enum class GridMode { uniform, ramp };

inline std::string to_string(GridMode mode) { return mode == GridMode::uniform ? "uniform" : "ramp"; }

inline GridMode grid_mode_from_string(const std::string& name) {
  if (name == "uniform") return GridMode::uniform;
  if (name == "ramp") return GridMode::ramp;
  throw InvalidArgument("unknown grid mode '" + name + "'");
}

/// Step sizes on [0, 1]. Step i spans [time(i), time(i + 1)); time(0) = 0 and
/// time(size()) = 1.
class TimeGrid {
 public:
  /// Normalizes the given positive steps so they sum to one.
  static TimeGrid from_steps(std::vector<double> steps) {
    if (steps.empty()) throw InvalidArgument("time grid needs at least one step");
    for (double g : steps)
      if (!(g > 0.0) || !std::isfinite(g)) throw InvalidArgument("time grid steps must be positive and finite");
    const double total = std::accumulate(steps.begin(), steps.end(), 0.0);
    for (double& g : steps) g /= total;
    return TimeGrid(std::move(steps));
  }

  std::size_t size() const noexcept { return steps_.size(); }
  double step(std::size_t i) const { return steps_.at(i); }
  std::span<const double> steps() const noexcept { return steps_; }

  /// Partial sums: partial_sums()[i] is the sum of the first i + 1 steps.
  std::span<const double> partial_sums() const noexcept { return std::span(times_).subspan(1); }

  /// Start time of step i; time(size()) is the horizon 1.
  double time(std::size_t i) const { return times_.at(i); }

  double total() const noexcept { return times_.back(); }

  /// Index of the step whose interval contains t (with a small tolerance so
  /// that 1 - time(i) on a symmetric grid lands on the intended step).
  std::size_t step_index(double t) const {
    const auto it = std::upper_bound(times_.begin(), times_.end() - 1, t + 1e-9);
    const auto idx = static_cast<std::size_t>(std::distance(times_.begin(), it));
    return idx == 0 ? 0 : std::min(idx - 1, size() - 1);
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  explicit TimeGrid(std::vector<double> steps) : steps_(std::move(steps)), times_(steps_.size() + 1, 0.0) {
    for (std::size_t i = 0; i < steps_.size(); ++i) times_[i + 1] = times_[i] + steps_[i];
    times_.back() = 1.0;
  }

  std::vector<double> steps_;
  std::vector<double> times_;
};

/// Uniform mode ignores the gammas. Ramp mode rises linearly from gamma_min to
/// gamma_max over the first half and mirrors it over the second, so the grid is
/// symmetric under t -> 1 - t.
inline TimeGrid make_time_grid(GridMode mode, std::size_t steps, double gamma_min, double gamma_max) {
  if (steps < 2) throw InvalidArgument("time grid needs at least 2 steps");
  if (mode == GridMode::uniform) return TimeGrid::from_steps(std::vector<double>(steps, 1.0));
  if (!(gamma_min > 0.0) || !(gamma_max > 0.0)) throw InvalidArgument("ramp gammas must be positive");
  if (gamma_min > gamma_max) throw InvalidArgument("ramp requires gamma_min <= gamma_max");
  const std::size_t peak = (steps - 1) / 2;
  std::vector<double> gammas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t u = std::min(i, steps - 1 - i);
    const double frac = peak == 0 ? 0.0 : static_cast<double>(u) / static_cast<double>(peak);
    gammas[i] = gamma_min + (gamma_max - gamma_min) * frac;
  }
  return TimeGrid::from_steps(std::move(gammas));
}

}  // namespace msb
