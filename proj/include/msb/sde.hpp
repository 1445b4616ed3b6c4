#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "msb/errors.hpp"
#include "msb/io.hpp"
#include "msb/parallel.hpp"
#include "msb/rng.hpp"
#include "msb/time_grid.hpp"

namespace msb {

/// Points are column vectors; a batch of n points in R^d is a d x n matrix.
using Point = Eigen::VectorXd;
using Batch = Eigen::MatrixXd;

/// Anything that can evaluate a drift on a batch of points sharing one time.
template <class D>
concept BatchDrift = requires(const D& d, double t, const Batch& x, const Eigen::VectorXd& sigma) {
  { d.eval_batch(t, x, sigma) } -> std::convertible_to<Batch>;
  { d.dim() } -> std::convertible_to<std::size_t>;
};

/// Ornstein-Uhlenbeck reference dX = -alpha X dt + sigma dW. sigma is passed
/// per call.
class OUReference {
 public:
  explicit OUReference(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidArgument("OU alpha must be positive");
  }
  double alpha() const noexcept { return alpha_; }

 private:
  double alpha_;
};

struct TransitionStats {
  Point mean;
  double variance;
};

/// Exact law of X_t | X_0 = x0 under the OU reference.
inline TransitionStats ou_transition_stats(const OUReference& ref, double sigma, const Point& x0, double t) {
  if (!(t > 0.0)) throw InvalidArgument("ou_transition_stats requires t > 0");
  const double a = ref.alpha();
  // -expm1(-2at) / (2a) stays accurate as a -> 0 (Brownian limit t).
  const double variance = sigma * sigma * (-std::expm1(-2.0 * a * t)) / (2.0 * a);
  return {x0 * std::exp(-a * t), variance};
}

/// x + drift * gamma + sigma * sqrt(gamma) * z.
inline Point euler_maruyama_step(const Point& x, const Point& drift_value, double gamma, double sigma,
                                 const Point& z) {
  if (x.size() != drift_value.size() || x.size() != z.size())
    throw InvalidArgument("euler_maruyama_step dimension mismatch");
  if (!(gamma > 0.0)) throw InvalidArgument("euler_maruyama_step requires gamma > 0");
  if (!(sigma >= 0.0)) throw InvalidArgument("euler_maruyama_step requires sigma >= 0");
  auto check = [](const Point& v, const char* what) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (!std::isfinite(v[i])) throw NumericError(std::string("non-finite ") + what + " at index " + std::to_string(i));
  };
  check(x, "state");
  check(drift_value, "drift");
  check(z, "noise");
  return x + drift_value * gamma + (sigma * std::sqrt(gamma)) * z;
}

/// N sample paths of M steps: states(i) is the d x N matrix of positions at
/// grid time i, for i = 0..M (so M + 1 states per path).
class TrajectoryCache {
 public:
  TrajectoryCache(TimeGrid grid, std::vector<Batch> states, Eigen::VectorXd sigmas)
      : grid_(std::move(grid)), states_(std::move(states)), sigmas_(std::move(sigmas)) {
    if (states_.size() != grid_.size() + 1) throw InvalidArgument("cache needs one state per grid time");
    for (const auto& s : states_)
      if (s.cols() != sigmas_.size() || s.rows() != states_.front().rows())
        throw InvalidArgument("cache states have inconsistent shape");
  }

  std::size_t trajectories() const noexcept { return static_cast<std::size_t>(sigmas_.size()); }
  std::size_t steps() const noexcept { return grid_.size(); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(states_.front().rows()); }
  const TimeGrid& grid() const noexcept { return grid_; }
  const Eigen::VectorXd& sigmas() const noexcept { return sigmas_; }

  const Batch& states(std::size_t i) const { return states_.at(i); }
  Point state(std::size_t trajectory, std::size_t i) const {
    return states_.at(i).col(static_cast<Eigen::Index>(trajectory));
  }

  bool operator==(const TrajectoryCache& other) const {
    if (!(grid_ == other.grid_) || sigmas_ != other.sigmas_ || states_.size() != other.states_.size()) return false;
    for (std::size_t i = 0; i < states_.size(); ++i)
      if (states_[i] != other.states_[i]) return false;
    return true;
  }

 private:
  TimeGrid grid_;
  std::vector<Batch> states_;
  Eigen::VectorXd sigmas_;
};

inline constexpr double kDefaultBlowupGuard = 1e6;

/// Forward Euler-Maruyama simulation. Trajectory j uses sigmas[j] at every
/// step and its noise at step i is drawn from stream (seed, j, i), so the
/// result is bitwise reproducible for any worker count.
template <BatchDrift Drift>
TrajectoryCache simulate_cache(const Batch& initial, const Drift& drift, const TimeGrid& grid,
                               const Eigen::VectorXd& sigmas, std::uint64_t seed,
                               double blowup_guard = kDefaultBlowupGuard) {
  const auto n = static_cast<std::size_t>(initial.cols());
  const auto d = initial.rows();
  if (n == 0) throw InvalidArgument("simulate_cache needs at least one initial sample");
  if (static_cast<std::size_t>(sigmas.size()) != n) throw InvalidArgument("one sigma per trajectory required");
  if (static_cast<std::size_t>(d) != drift.dim()) throw InvalidArgument("drift dimension does not match samples");
  for (Eigen::Index j = 0; j < sigmas.size(); ++j)
    if (!(sigmas[j] >= 0.0) || !std::isfinite(sigmas[j])) throw InvalidArgument("sigmas must be finite and >= 0");

  const std::size_t steps = grid.size();
  std::vector<Batch> states(steps + 1, Batch(d, static_cast<Eigen::Index>(n)));
  states[0] = initial;

  parallel_chunks(n, 512, [&](std::size_t begin, std::size_t end) {
    const auto b = static_cast<Eigen::Index>(begin);
    const auto w = static_cast<Eigen::Index>(end - begin);
    const Eigen::VectorXd sig = sigmas.segment(b, w);
    Batch x = initial.middleCols(b, w);
    for (std::size_t i = 0; i < steps; ++i) {
      const double gamma = grid.step(i);
      const double sqrt_gamma = std::sqrt(gamma);
      const Batch f = drift.eval_batch(grid.time(i), x, sig);
      for (Eigen::Index c = 0; c < w; ++c) {
        const std::size_t j = begin + static_cast<std::size_t>(c);
        CounterRng rng(stream_key(seed, {j, i}));
        for (Eigen::Index k = 0; k < d; ++k) {
          const double next = x(k, c) + f(k, c) * gamma + sig[c] * sqrt_gamma * rng.normal();
          if (!std::isfinite(next) || std::abs(next) > blowup_guard) throw SimulationBlowup(j, i + 1, next);
          x(k, c) = next;
        }
      }
      states[i + 1].middleCols(b, w) = x;
    }
  });
  return TrajectoryCache(grid, std::move(states), sigmas);
}

// Binary layout: "MSBC", u32 version, u64 N, u64 M, u64 d, then N x (M+1) x d
// float64 states in row-major (trajectory, step, coordinate) order, N sigmas,
// M grid steps.
inline constexpr std::uint32_t kCacheFormatVersion = 1;

inline void write_cache_binary(const TrajectoryCache& cache, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out.write("MSBC", 4);
  io::put<std::uint32_t>(out, kCacheFormatVersion);
  io::put<std::uint64_t>(out, cache.trajectories());
  io::put<std::uint64_t>(out, cache.steps());
  io::put<std::uint64_t>(out, cache.dim());
  for (std::size_t j = 0; j < cache.trajectories(); ++j)
    for (std::size_t i = 0; i <= cache.steps(); ++i) {
      const Point p = cache.state(j, i);
      io::put_doubles(out, p.data(), cache.dim());
    }
  io::put_doubles(out, cache.sigmas().data(), cache.trajectories());
  io::put_doubles(out, cache.grid().steps().data(), cache.steps());
}

inline TrajectoryCache read_cache_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  io::expect_magic(in, "MSBC");
  if (io::get<std::uint32_t>(in) != kCacheFormatVersion) throw IntegrityError("unsupported cache version");
  const auto n = io::get<std::uint64_t>(in);
  const auto m = io::get<std::uint64_t>(in);
  const auto d = io::get<std::uint64_t>(in);
  if (n == 0 || m == 0 || d == 0 || n * (m + 1) * d > (std::uint64_t{1} << 34))
    throw IntegrityError("implausible cache header");
  std::vector<Batch> states(m + 1, Batch(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n)));
  Point p(static_cast<Eigen::Index>(d));
  for (std::uint64_t j = 0; j < n; ++j)
    for (std::uint64_t i = 0; i <= m; ++i) {
      io::get_doubles(in, p.data(), d);
      states[i].col(static_cast<Eigen::Index>(j)) = p;
    }
  Eigen::VectorXd sigmas(static_cast<Eigen::Index>(n));
  io::get_doubles(in, sigmas.data(), n);
  std::vector<double> steps(m);
  io::get_doubles(in, steps.data(), m);
  return TrajectoryCache(TimeGrid::from_steps(std::move(steps)), std::move(states), std::move(sigmas));
}

/// Columns: traj, step, t, x_0..x_{d-1}, sigma.
inline void write_cache_csv(const TrajectoryCache& cache, std::ostream& out) {
  out << "traj,step,t";
  for (std::size_t k = 0; k < cache.dim(); ++k) out << ",x_" << k;
  out << ",sigma\n";
  for (std::size_t j = 0; j < cache.trajectories(); ++j)
    for (std::size_t i = 0; i <= cache.steps(); ++i) {
      out << j << ',' << i << ',' << io::format_double(cache.grid().time(i));
      const Point p = cache.state(j, i);
      for (Eigen::Index k = 0; k < p.size(); ++k) out << ',' << io::format_double(p[k]);
      out << ',' << io::format_double(cache.sigmas()[static_cast<Eigen::Index>(j)]) << '\n';
    }
}

}  // namespace msb
