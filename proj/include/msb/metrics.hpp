#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "msb/datasets.hpp"
#include "msb/errors.hpp"
#include "msb/rng.hpp"

namespace msb {

struct Moments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  std::optional<double> joint_covariance;  // mean over coordinates of cov(X0^k, X1^k)
};

/// Unbiased sample moments. With a paired batch (aligned by index) the joint
/// covariance between the two is reported as well.
inline Moments empirical_moments(const Batch& batch, const Batch* paired = nullptr) {
  const Eigen::Index n = batch.cols();
  if (n < 2) throw InvalidArgument("empirical_moments needs at least 2 samples");
  Moments m;
  m.mean = batch.rowwise().mean();
  const Batch centered = batch.colwise() - m.mean;
  m.variance = centered.rowwise().squaredNorm() / static_cast<double>(n - 1);
  if (paired) {
    if (paired->cols() != n || paired->rows() != batch.rows())
      throw InvalidArgument("paired batch must have the same shape");
    const Eigen::VectorXd pm = paired->rowwise().mean();
    const Batch pc = paired->colwise() - pm;
    const Eigen::VectorXd cov = (centered.array() * pc.array()).rowwise().sum() / static_cast<double>(n - 1);
    m.joint_covariance = cov.mean();
  }
  return m;
}

inline Moments empirical_moments(const SampleBatch& batch, const SampleBatch* paired = nullptr) {
  return empirical_moments(batch.points, paired ? &paired->points : nullptr);
}

namespace detail {

/// Seeded subsample of at most cap columns; the identity when n <= cap.
inline Batch subsample(const Batch& x, std::size_t cap, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.cols());
  if (n <= cap) return x;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(stream_key(seed, {0xE4E5}));
  for (std::size_t i = 0; i < cap; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  Batch out(x.rows(), static_cast<Eigen::Index>(cap));
  for (std::size_t i = 0; i < cap; ++i) out.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

inline double mean_pairwise_distance(const Batch& a, const Batch& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.cols(); ++j) row += (a.col(i) - b.col(j)).norm();
    total += row;
  }
  return total / (static_cast<double>(a.cols()) * static_cast<double>(b.cols()));
}

}  // namespace detail

inline constexpr std::size_t kEnergySubsampleCap = 5000;

/// Energy distance 2E|A-B| - E|A-A'| - E|B-B'| (V-statistic) on seeded
/// subsamples of at most `cap` points per batch.
inline double energy_distance(const Batch& a, const Batch& b, std::size_t cap = kEnergySubsampleCap,
                              std::uint64_t seed = 0) {
  if (a.cols() == 0 || b.cols() == 0) throw InvalidArgument("energy_distance needs nonempty batches");
  if (a.rows() != b.rows()) throw InvalidArgument("energy_distance dimension mismatch");
  const Batch sa = detail::subsample(a, cap, seed);
  const Batch sb = detail::subsample(b, cap, seed);
  const double ab = detail::mean_pairwise_distance(sa, sb);
  const double aa = detail::mean_pairwise_distance(sa, sa);
  const double bb = detail::mean_pairwise_distance(sb, sb);
  return std::max(0.0, 2.0 * ab - aa - bb);
}

inline double energy_distance(const SampleBatch& a, const SampleBatch& b, std::size_t cap = kEnergySubsampleCap,
                              std::uint64_t seed = 0) {
  return energy_distance(a.points, b.points, cap, seed);
}

/// Fraction of points whose terminal mode differs from their initial mode.
/// Both batches must carry labels (see assign_modes) and be index-aligned.
inline double mixing_rate(const SampleBatch& initial, const SampleBatch& terminal) {
  if (!initial.labels || !terminal.labels) throw InvalidArgument("mixing_rate requires labels on both batches");
  const auto& a = *initial.labels;
  const auto& b = *terminal.labels;
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("mixing_rate batches must be aligned and nonempty");
  std::size_t changed = 0;
  for (std::size_t j = 0; j < a.size(); ++j) changed += a[j] != b[j];
  return static_cast<double>(changed) / static_cast<double>(a.size());
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman needs two aligned series of length >= 2");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j);
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace msb
