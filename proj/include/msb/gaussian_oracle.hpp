#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "msb/errors.hpp"

namespace msb {

/// Off-diagonal coefficient of the mirror bridge coupling between N(0, I) and
/// itself under an OU(alpha, sigma) reference on [0, 1]. Written as
/// 2a / (s^2 sinh a + sqrt(s^4 sinh^2 a + 4 a^2)), which is algebraically the
/// usual root of the quadratic but free of cancellation for large sigma.
inline double beta(double alpha, double sigma) {
  if (!(alpha > 0.0) || !(sigma > 0.0)) throw InvalidArgument("beta requires alpha > 0 and sigma > 0");
  const double s2 = sigma * sigma;
  const double sh = std::sinh(alpha);
  const double p = s2 * sh;
  return 2.0 * alpha / (p + std::hypot(p, 2.0 * alpha));
}

/// Closed-form Gaussian mirror bridge. Coordinates are independent, so all
/// quantities are scalars applied per coordinate.
struct GaussianBridgeSolution {
  double alpha = 1.0;
  double sigma = 1.0;
  double beta = 0.0;
  double sigma1_sq = 0.0;  // OU conditional variance at t = 1
  std::size_t dim = 1;
};

inline GaussianBridgeSolution solve_gaussian_bridge(double alpha, double sigma, std::size_t dim = 1) {
  if (dim == 0) throw InvalidArgument("dimension must be positive");
  return {alpha, sigma, beta(alpha, sigma), sigma * sigma * (-std::expm1(-2.0 * alpha)) / (2.0 * alpha), dim};
}

struct ConditionalStats {
  double mean;
  double variance;
};

/// Law of X_1 | X_0 = x0 per coordinate: N(beta x0, 1 - beta^2).
inline ConditionalStats conditional_stats(const GaussianBridgeSolution& s, double x0) {
  return {s.beta * x0, 1.0 - s.beta * s.beta};
}

/// [[I, beta I], [beta I, I]].
inline Eigen::MatrixXd joint_covariance(const GaussianBridgeSolution& s) {
  const auto d = static_cast<Eigen::Index>(s.dim);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(2 * d, 2 * d);
  for (Eigen::Index i = 0; i < d; ++i) {
    cov(i, d + i) = s.beta;
    cov(d + i, i) = s.beta;
  }
  return cov;
}

/// Discrete static bridge on a 1-D grid: coupling between two copies of the
/// discretized standard normal under the OU transition kernel at t = 1.
struct GridBridge {
  Eigen::VectorXd points;
  Eigen::VectorXd weights;
  Eigen::MatrixXd log_kernel;  // symmetric part of log K; separable terms are absorbed by the scalings
  Eigen::MatrixXd coupling;
  std::size_t iterations = 0;
  double residual = 0.0;

  double covariance() const { return points.dot(coupling * points); }
};

/// Sinkhorn scaling for identical marginals. With a symmetric kernel the two
/// scaling vectors coincide, so a single log-potential f is iterated with the
/// damped update f <- (f + log w - logsumexp_j(f_j + C_ij)) / 2, and the
/// coupling exp(f_i + f_j + C_ij) is symmetric by construction.
inline GridBridge solve_grid_bridge(double alpha, double sigma, std::size_t n = 400, double half_width = 6.0,
                                    std::size_t max_iters = 20000, double tol = 1e-10) {
  if (!(alpha > 0.0) || !(sigma > 0.0)) throw InvalidArgument("grid bridge requires alpha > 0 and sigma > 0");
  if (n < 50) throw InvalidArgument("grid bridge requires n >= 50");
  if (!(half_width >= 4.0)) throw InvalidArgument("grid bridge requires L >= 4");
  if (!(tol > 0.0)) throw InvalidArgument("grid bridge requires tol > 0");

  const auto m = static_cast<Eigen::Index>(n);
  GridBridge g;
  g.points = Eigen::VectorXd::LinSpaced(m, -half_width, half_width);
  g.weights = (-0.5 * g.points.array().square()).exp().matrix();
  g.weights /= g.weights.sum();

  // log N(y; x e^{-a}, s1^2) = -(y^2 - 2 e^{-a} x y + e^{-2a} x^2) / (2 s1^2) + const.
  // Only the cross term couples x and y.
  const double s1 = sigma * sigma * (-std::expm1(-2.0 * alpha)) / (2.0 * alpha);
  const double cross = std::exp(-alpha) / s1;
  g.log_kernel = cross * (g.points * g.points.transpose());

  const Eigen::ArrayXd log_w = g.weights.array().log();
  Eigen::ArrayXd f = log_w;
  auto log_row_sums = [&](const Eigen::ArrayXd& pot) {
    Eigen::ArrayXd out(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Eigen::ArrayXd row = pot + g.log_kernel.row(i).transpose().array();
      const double top = row.maxCoeff();
      out[i] = top + std::log((row - top).exp().sum());
    }
    return out;
  };

  double residual = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < max_iters; ++it) {
    const Eigen::ArrayXd lse = log_row_sums(f);
    // Row marginal of the current coupling is exp(f_i + lse_i).
    residual = ((f + lse).exp() - g.weights.array()).abs().maxCoeff();
    if (residual < tol) break;
    f = 0.5 * (f + log_w - lse);
  }
  g.iterations = it;
  g.residual = residual;
  if (!(residual < tol)) throw ConvergenceError("grid bridge did not converge in " + std::to_string(max_iters) + " iterations", residual);

  g.coupling.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) g.coupling(i, j) = std::exp((f[i] + f[j]) + g.log_kernel(i, j));
  return g;
}

}  // namespace msb
