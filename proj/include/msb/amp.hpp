#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msb/datasets.hpp"
#include "msb/drift.hpp"
#include "msb/errors.hpp"
#include "msb/gaussian_oracle.hpp"
#include "msb/io.hpp"
#include "msb/metrics.hpp"
#include "msb/mlp.hpp"
#include "msb/rng.hpp"
#include "msb/sde.hpp"
#include "msb/time_grid.hpp"

namespace msb {

enum class DriftFamily { affine, neural };

/// Sign of the drift-difference term in the regression target. `plus`
/// adds f(X_{i+1}) - f(X_i); `minus` subtracts it.
enum class CorrectionSign { plus, minus };

/// Time at which the X_{i+1} correction term is evaluated: the start of the
/// step (`current`) or its end (`next`).
enum class CorrectionTime { current, next };

enum class LossWeighting { uniform, inverse_sigma_sq, inverse_variance };

inline std::string to_string(DriftFamily f) { return f == DriftFamily::affine ? "affine" : "neural"; }
inline std::string to_string(CorrectionSign s) { return s == CorrectionSign::plus ? "plus" : "minus"; }
inline std::string to_string(CorrectionTime s) { return s == CorrectionTime::current ? "current" : "next"; }
inline std::string to_string(LossWeighting w) {
  switch (w) {
    case LossWeighting::uniform: return "uniform";
    case LossWeighting::inverse_sigma_sq: return "inverse_sigma_sq";
    case LossWeighting::inverse_variance: return "inverse_variance";
  }
  return "?";
}

inline DriftFamily drift_family_from_string(const std::string& s) {
  if (s == "affine") return DriftFamily::affine;
  if (s == "neural") return DriftFamily::neural;
  throw InvalidArgument("unknown drift family '" + s + "'");
}
inline CorrectionSign correction_sign_from_string(const std::string& s) {
  if (s == "plus") return CorrectionSign::plus;
  if (s == "minus") return CorrectionSign::minus;
  throw InvalidArgument("unknown correction sign '" + s + "'");
}
inline CorrectionTime correction_time_from_string(const std::string& s) {
  if (s == "current") return CorrectionTime::current;
  if (s == "next") return CorrectionTime::next;
  throw InvalidArgument("unknown correction time '" + s + "'");
}
inline LossWeighting loss_weighting_from_string(const std::string& s) {
  if (s == "uniform") return LossWeighting::uniform;
  if (s == "inverse_sigma_sq") return LossWeighting::inverse_sigma_sq;
  if (s == "inverse_variance") return LossWeighting::inverse_variance;
  throw InvalidArgument("unknown loss weighting '" + s + "'");
}

struct GridSpec {
  GridMode mode = GridMode::uniform;
  std::size_t steps = 20;
  double gamma_min = 1e-5;
  double gamma_max = 0.1;

  TimeGrid build() const { return make_time_grid(mode, steps, gamma_min, gamma_max); }
  bool operator==(const GridSpec&) const = default;
};

struct AMPConfig {
  std::size_t outer_iterations = 20;
  std::size_t inner_iterations = 10000;
  std::size_t cache_size = 10000;
  std::size_t refresh_period = 1000;
  std::size_t batch_size = 1024;
  GridSpec grid;
  double sigma_min = 1.0;
  double sigma_max = 5.0;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  DriftFamily family = DriftFamily::neural;
  CorrectionSign correction = CorrectionSign::plus;
  CorrectionTime correction_time = CorrectionTime::current;
  LossWeighting weighting = LossWeighting::uniform;
  double learning_rate = 1e-4;
  double lr_final_fraction = 1.0;  // linear decay to this fraction over an outer iteration
  std::size_t hidden_width = 128;
  std::size_t hidden_layers = 4;
  std::size_t time_frequencies = 8;
  std::size_t distill_iterations = 500;
  std::size_t eval_paths = 100000;
  double eval_sigma = 1.0;
  double blowup_guard = kDefaultBlowupGuard;

  MLPArchitecture architecture(std::size_t dim) const { return {dim, hidden_width, hidden_layers, time_frequencies}; }

  std::size_t caches_per_outer() const { return std::max<std::size_t>(1, (inner_iterations + refresh_period - 1) / refresh_period); }

  void validate() const {
    if (cache_size == 0 || refresh_period == 0 || batch_size == 0 || eval_paths < 2)
      throw InvalidArgument("counts must be positive (eval_paths >= 2)");
    if (family == DriftFamily::neural && (hidden_width == 0 || hidden_layers == 0))
      throw InvalidArgument("network needs at least one hidden layer of positive width");
    if (!(sigma_min > 0.0) || !(sigma_min <= sigma_max) || !std::isfinite(sigma_max))
      throw InvalidArgument("sigma range must satisfy 0 < sigma_min <= sigma_max");
    if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) throw InvalidArgument("lr_final_fraction must lie in (0, 1]");
    if (!(eval_sigma > 0.0)) throw InvalidArgument("eval_sigma must be positive");
    if (!(blowup_guard > 0.0)) throw InvalidArgument("blowup_guard must be positive");
    (void)grid.build();
  }
};

/// One row of the per-outer metric log.
struct OuterMetrics {
  std::size_t outer_iter = 0;
  double terminal_mean = 0.0;
  double terminal_var = 0.0;
  double joint_cov = 0.0;
  double beta_target = std::numeric_limits<double>::quiet_NaN();
  double kl_gap = 0.0;
  double distill_err = 0.0;
  double wall_seconds = 0.0;
};

struct AMPState {
  DriftModel current;
  DriftModel previous;
  std::optional<AdamState> optimizer;
  std::size_t outer = 0;
  std::vector<OuterMetrics> log;
};

inline AMPState initial_state(const AMPConfig& cfg, std::size_t dim) {
  const auto ref = DriftModel::ou(cfg.alpha, dim);
  return {ref, ref, std::nullopt, 0, {}};
}

struct AMPHooks {
  std::function<void(const std::string&)> warn;
  /// Sees the forward drift, the backward estimate and their exact average.
  std::function<void(const DriftModel&, const DriftModel&, const DriftModel&)> on_reverse;
  /// Called after each completed outer iteration.
  std::function<void(const AMPState&)> on_outer;
};

namespace stream {
inline constexpr std::uint64_t cache_init = 1, cache_sigma = 2, cache_noise = 3, batch = 4, distill = 5, eval_init = 6,
                               eval_noise = 7, net_init = 8, probe = 9;
}

/// Column i * N + j holds the tuple for transition i of trajectory j: input
/// X_{i+1} at reversed time 1 - t_{i+1}, target (X_i - X_{i+1}) / gamma_i plus
/// the signed drift correction.
struct RegressionTargets {
  Eigen::VectorXd t;
  Batch x;
  Batch target;
  Eigen::VectorXd sigma;
  Eigen::VectorXd gamma;  // step length of the transition

  std::size_t size() const noexcept { return static_cast<std::size_t>(t.size()); }
};

inline RegressionTargets build_regression_targets(const TrajectoryCache& cache, const DriftModel& prior,
                                                  CorrectionSign sign = CorrectionSign::plus,
                                                  CorrectionTime when = CorrectionTime::current) {
  const std::size_t n = cache.trajectories(), m = cache.steps();
  const auto d = static_cast<Eigen::Index>(cache.dim());
  if (n == 0 || m == 0) throw InvalidArgument("regression targets need a nonempty cache");
  if (prior.dim() != cache.dim()) throw InvalidArgument("prior drift dimension does not match cache");
  const auto& grid = cache.grid();
  const auto nn = static_cast<Eigen::Index>(n);

  RegressionTargets out;
  out.t.resize(nn * static_cast<Eigen::Index>(m));
  out.x.resize(d, out.t.size());
  out.target.resize(d, out.t.size());
  out.sigma.resize(out.t.size());
  out.gamma.resize(out.t.size());
  const double s = sign == CorrectionSign::plus ? 1.0 : -1.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double gamma = grid.step(i);
    if (!(gamma > 0.0)) throw InvalidArgument("invalid grid: zero step");
    const Batch& xi = cache.states(i);
    const Batch& xn = cache.states(i + 1);
    const double t_next = when == CorrectionTime::current ? grid.time(i) : grid.time(i + 1);
    const Batch f_next = prior.eval_batch(t_next, xn, cache.sigmas());
    const Batch f_cur = prior.eval_batch(grid.time(i), xi, cache.sigmas());
    const auto col = static_cast<Eigen::Index>(i) * nn;
    out.t.segment(col, nn).setConstant(std::max(0.0, 1.0 - grid.time(i + 1)));
    out.x.middleCols(col, nn) = xn;
    out.target.middleCols(col, nn) = (xi - xn) / gamma + s * (f_next - f_cur);
    out.sigma.segment(col, nn) = cache.sigmas();
    out.gamma.segment(col, nn).setConstant(gamma);
  }
  return out;
}

/// Discretized (1/2 sigma^2) int E||a - b||^2 dt under the cache's law, up to
/// the additive constant of the Girsanov identity.
inline double estimate_kl_gap(const DriftModel& a, const DriftModel& b, const TrajectoryCache& cache) {
  const Eigen::VectorXd& sig = cache.sigmas();
  for (Eigen::Index j = 0; j < sig.size(); ++j)
    if (!(sig[j] > 0.0)) throw InvalidArgument("estimate_kl_gap needs sigma > 0 on every trajectory");
  const Eigen::ArrayXd inv = 1.0 / (2.0 * sig.array().square());
  double gap = 0.0;
  for (std::size_t i = 0; i < cache.steps(); ++i) {
    const double t = cache.grid().time(i);
    const Batch diff = a.eval_batch(t, cache.states(i), sig) - b.eval_batch(t, cache.states(i), sig);
    const Eigen::ArrayXd sq = diff.colwise().squaredNorm().transpose().array();
    gap += (sq * inv).mean() * cache.grid().step(i);
  }
  return std::max(0.0, gap);
}

/// Cache number `refresh` of outer iteration `outer`: fresh samples from pi,
/// fresh sigmas, simulated under `drift`.
inline TrajectoryCache make_training_cache(const DriftModel& drift, const AMPConfig& cfg, const DataSampler& sampler,
                                           std::size_t outer, std::size_t refresh) {
  const Batch init = sampler.draw(cfg.cache_size, stream_key(cfg.seed, {outer, refresh, stream::cache_init}));
  Eigen::VectorXd sig(static_cast<Eigen::Index>(cfg.cache_size));
  CounterRng rng(stream_key(cfg.seed, {outer, refresh, stream::cache_sigma}));
  for (Eigen::Index j = 0; j < sig.size(); ++j) sig[j] = rng.uniform(cfg.sigma_min, cfg.sigma_max);
  return simulate_cache(init, drift, cfg.grid.build(), sig, stream_key(cfg.seed, {outer, refresh, stream::cache_noise}),
                        cfg.blowup_guard);
}

namespace detail {

/// Per-tuple loss weights. inverse_variance is gamma / sigma^2, the reciprocal
/// of the target noise variance.
inline Eigen::VectorXd tuple_weights(const Eigen::VectorXd& sigma, const Eigen::VectorXd& gamma, LossWeighting w) {
  switch (w) {
    case LossWeighting::uniform: return Eigen::VectorXd::Ones(sigma.size());
    case LossWeighting::inverse_sigma_sq: return (1.0 / sigma.array().square()).matrix();
    case LossWeighting::inverse_variance: return (gamma.array() / sigma.array().square()).matrix();
  }
  return Eigen::VectorXd::Ones(sigma.size());
}

/// Accumulates weighted normal equations for one affine piece.
struct NormalEquations {
  Eigen::MatrixXd gram;  // (d+1) x (d+1)
  Eigen::MatrixXd rhs;   // (d+1) x d

  explicit NormalEquations(Eigen::Index d) : gram(Eigen::MatrixXd::Zero(d + 1, d + 1)), rhs(Eigen::MatrixXd::Zero(d + 1, d)) {}

  void add(const Batch& x, const Batch& target, const Eigen::VectorXd& w) {
    Eigen::MatrixXd design(x.rows() + 1, x.cols());
    design.topRows(x.rows()) = x;
    design.bottomRows(1).setOnes();
    const Eigen::MatrixXd wd = design * w.asDiagonal();
    gram.noalias() += wd * design.transpose();
    rhs.noalias() += wd * target.transpose();
  }
};

inline MLPParams gather_params_init(const AMPState& state, const AMPConfig& cfg, std::size_t dim) {
  if (const auto* nn = std::get_if<NeuralDrift>(&state.current.payload())) return *nn->params;
  return MLPParams::initialize(cfg.architecture(dim), stream_key(cfg.seed, {stream::net_init}));
}

inline RegressionBatch gather(const RegressionTargets& data, const std::vector<Eigen::Index>& idx) {
  const auto b = static_cast<Eigen::Index>(idx.size());
  RegressionBatch batch;
  batch.t.resize(b);
  batch.x.resize(data.x.rows(), b);
  batch.target.resize(data.target.rows(), b);
  batch.sigma.resize(b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const Eigen::Index c = idx[static_cast<std::size_t>(k)];
    batch.t[k] = data.t[c];
    batch.x.col(k) = data.x.col(c);
    batch.target.col(k) = data.target.col(c);
    batch.sigma[k] = data.sigma[c];
  }
  return batch;
}

/// Minibatch indices; the full set when it is smaller than the batch size.
inline std::vector<Eigen::Index> draw_indices(std::size_t total, std::size_t batch, std::uint64_t key) {
  std::vector<Eigen::Index> idx;
  if (total <= batch) {
    idx.resize(total);
    for (std::size_t k = 0; k < total; ++k) idx[k] = static_cast<Eigen::Index>(k);
    return idx;
  }
  CounterRng rng(key);
  idx.resize(batch);
  for (auto& i : idx) i = static_cast<Eigen::Index>(rng.below(total));
  return idx;
}

inline double scheduled_lr(const AMPConfig& cfg, std::size_t step, std::size_t total) {
  if (total == 0) return cfg.learning_rate;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return cfg.learning_rate * (1.0 - (1.0 - cfg.lr_final_fraction) * frac);
}

inline void warn_if_flat(const std::vector<double>& losses, std::size_t outer, const AMPHooks* hooks) {
  if (losses.size() < 20 || !hooks || !hooks->warn) return;
  const std::size_t w = losses.size() / 10;
  double head = 0.0, tail = 0.0;
  for (std::size_t k = 0; k < w; ++k) {
    head += losses[k];
    tail += losses[losses.size() - 1 - k];
  }
  if (tail >= head)
    hooks->warn("outer iteration " + std::to_string(outer) + ": training loss did not decrease");
}

}  // namespace detail

struct DirectProjection {
  DriftModel backward;
  DriftModel forward;
  double normal_residual = 0.0;  // affine only
  std::vector<double> losses;    // neural only
  std::optional<AdamState> optimizer;
  RegressionTargets last_targets;
  std::optional<TrajectoryCache> last_cache;  // simulated under the forward drift
};

/// Exact weighted least-squares fit of a piecewise-affine backward drift, one
/// piece per grid step, over every given cache.
inline DirectProjection fit_affine_backward(const std::vector<TrajectoryCache>& caches, const DriftModel& prior,
                                            const AMPConfig& cfg) {
  if (caches.empty()) throw InvalidArgument("fit_affine_backward needs at least one cache");
  const auto d = static_cast<Eigen::Index>(prior.dim());
  const TimeGrid& grid = caches.front().grid();
  const std::size_t m = grid.size();
  std::vector<detail::NormalEquations> eqs(m, detail::NormalEquations(d));
  RegressionTargets last;
  for (const auto& cache : caches) {
    last = build_regression_targets(cache, prior, cfg.correction, cfg.correction_time);
    const auto n = static_cast<Eigen::Index>(cache.trajectories());
    const Eigen::VectorXd w = detail::tuple_weights(last.sigma, last.gamma, cfg.weighting);
    for (std::size_t i = 0; i < m; ++i) {
      const auto col = static_cast<Eigen::Index>(i) * n;
      eqs[i].add(last.x.middleCols(col, n), last.target.middleCols(col, n), w.segment(col, n));
    }
  }
  DirectProjection out{prior, prior, 0.0, {}, std::nullopt, {}, caches.back()};
  std::vector<AffinePiece> pieces(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& eq = eqs[i];
    const Eigen::MatrixXd theta = eq.gram.ldlt().solve(eq.rhs);
    const double scale = std::max(1.0, eq.rhs.cwiseAbs().maxCoeff());
    out.normal_residual = std::max(out.normal_residual, (eq.gram * theta - eq.rhs).cwiseAbs().maxCoeff() / scale);
    if (!theta.allFinite()) throw NumericError("singular normal equations at step " + std::to_string(i));
    AffinePiece& p = pieces[m - 1 - i];
    p.start = m - 1 - i == 0 ? 0.0 : std::max(0.0, 1.0 - grid.time(i + 1));
    p.a = theta.topRows(d).transpose();
    p.c = theta.row(d).transpose();
  }
  out.backward = DriftModel::affine(AffineDrift::piecewise(std::move(pieces)));
  out.last_targets = std::move(last);
  return out;
}

/// Direct KL projection: the forward drift is the current symmetric drift and
/// the backward drift is regressed from cached trajectories.
inline DirectProjection direct_projection(const AMPState& state, const AMPConfig& cfg, const DataSampler& sampler,
                                          const AMPHooks* hooks = nullptr) {
  const std::size_t dim = sampler.dim;
  const std::size_t caches = cfg.caches_per_outer();
  auto build_cache = [&](std::size_t r) {
    try {
      return make_training_cache(state.current, cfg, sampler, state.outer, r);
    } catch (const SimulationBlowup& e) {
      throw NumericError("outer iteration " + std::to_string(state.outer) + ": " + e.what());
    }
  };

  if (cfg.family == DriftFamily::affine) {
    std::vector<TrajectoryCache> all;
    all.reserve(caches);
    for (std::size_t r = 0; r < caches; ++r) all.push_back(build_cache(r));
    auto out = fit_affine_backward(all, state.current, cfg);
    out.forward = state.current;
    return out;
  }

  MLPParams params = detail::gather_params_init(state, cfg, dim);
  AdamState adam = AdamState::for_params(params, cfg.learning_rate);
  DirectProjection out{state.current, state.current, 0.0, {}, std::nullopt, {}, std::nullopt};
  out.losses.reserve(cfg.inner_iterations);
  RegressionTargets data;
  Eigen::VectorXd weights;
  auto refresh = [&](std::size_t r) {
    out.last_cache = build_cache(r);
    data = build_regression_targets(*out.last_cache, state.current, cfg.correction, cfg.correction_time);
  };
  if (cfg.inner_iterations == 0) refresh(0);
  for (std::size_t k = 0; k < cfg.inner_iterations; ++k) {
    if (k % cfg.refresh_period == 0) {
      refresh(k / cfg.refresh_period);
      weights = detail::tuple_weights(data.sigma, data.gamma, cfg.weighting);
    }
    const auto idx = detail::draw_indices(data.size(), cfg.batch_size, stream_key(cfg.seed, {state.outer, k, stream::batch}));
    RegressionBatch batch = detail::gather(data, idx);
    if (cfg.weighting != LossWeighting::uniform) {
      batch.weight.resize(batch.t.size());
      for (std::size_t b = 0; b < idx.size(); ++b) batch.weight[static_cast<Eigen::Index>(b)] = weights[idx[b]];
    }
    auto lg = loss_and_gradient(params, batch);
    out.losses.push_back(lg.loss);
    adam.learning_rate = detail::scheduled_lr(cfg, k, cfg.inner_iterations);
    auto step = adam_step(params, lg.grad, adam);
    params = std::move(step.params);
    adam = std::move(step.state);
  }
  detail::warn_if_flat(out.losses, state.outer, hooks);
  out.backward = DriftModel::neural(std::move(params));
  out.optimizer = std::move(adam);
  out.last_targets = std::move(data);
  return out;
}

/// Reverse KL projection onto time-symmetric measures: the drift average.
inline DriftModel reverse_projection(const DriftModel& forward, const DriftModel& backward) {
  return average_drifts(forward, backward);
}

struct Distillation {
  DriftModel model;
  double fit_error = 0.0;
};

/// Regresses a single network onto a pending average at cached probe points,
/// warm-started from `init`.
inline Distillation distill_average(const DriftModel& average, const MLPParams& init, const RegressionTargets& probes,
                                    const AMPConfig& cfg, std::size_t outer) {
  MLPParams params = init;
  AdamState adam = AdamState::for_params(params, cfg.learning_rate);
  for (std::size_t q = 0; q < cfg.distill_iterations; ++q) {
    const auto idx = detail::draw_indices(probes.size(), cfg.batch_size, stream_key(cfg.seed, {outer, q, stream::distill}));
    RegressionBatch batch = detail::gather(probes, idx);
    batch.target = average.eval_batch(batch.t, batch.x, batch.sigma);
    auto lg = loss_and_gradient(params, batch);
    adam.learning_rate = detail::scheduled_lr(cfg, q, cfg.distill_iterations);
    auto step = adam_step(params, lg.grad, adam);
    params = std::move(step.params);
    adam = std::move(step.state);
  }
  const auto idx = detail::draw_indices(probes.size(), 4096, stream_key(cfg.seed, {outer, stream::probe}));
  RegressionBatch check = detail::gather(probes, idx);
  check.target = average.eval_batch(check.t, check.x, check.sigma);
  const double err = loss_and_gradient(params, check).loss;
  return {DriftModel::neural(std::move(params)), err};
}

/// Terminal moments and joint covariance of fresh paths at the evaluation
/// sigma.
inline OuterMetrics evaluate_bridge(const DriftModel& drift, const AMPConfig& cfg, const DataSampler& sampler,
                                    std::size_t outer, bool with_oracle) {
  const Batch init = sampler.draw(cfg.eval_paths, stream_key(cfg.seed, {outer, stream::eval_init}));
  const Eigen::VectorXd sig = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(cfg.eval_paths), cfg.eval_sigma);
  const auto cache = simulate_cache(init, drift, cfg.grid.build(), sig, stream_key(cfg.seed, {outer, stream::eval_noise}),
                                    cfg.blowup_guard);
  const Batch& x1 = cache.states(cache.steps());
  const Moments mom = empirical_moments(x1, &init);
  OuterMetrics row;
  row.outer_iter = outer + 1;
  row.terminal_mean = mom.mean.mean();
  row.terminal_var = mom.variance.mean();
  row.joint_cov = *mom.joint_covariance;
  if (with_oracle) row.beta_target = beta(cfg.alpha, cfg.eval_sigma);
  return row;
}

/// One outer iteration: direct projection, reverse projection, then collapse
/// (affine) or distillation (neural), followed by evaluation.
inline void amp_outer_step(AMPState& state, const AMPConfig& cfg, const DataSampler& sampler, bool with_oracle,
                           const AMPHooks* hooks = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  auto dp = direct_projection(state, cfg, sampler, hooks);
  const DriftModel avg = reverse_projection(dp.forward, dp.backward);
  if (hooks && hooks->on_reverse) hooks->on_reverse(dp.forward, dp.backward, avg);

  DriftModel next = avg;
  double distill_err = 0.0;
  if (cfg.family == DriftFamily::affine) {
    next = DriftModel::affine(collapse_affine_average(avg));
  } else {
    const auto& init = *std::get<NeuralDrift>(dp.backward.payload()).params;
    auto dist = distill_average(avg, init, dp.last_targets, cfg, state.outer);
    next = std::move(dist.model);
    distill_err = dist.fit_error;
  }

  OuterMetrics row;
  try {
    row = evaluate_bridge(next, cfg, sampler, state.outer, with_oracle);
  } catch (const SimulationBlowup& e) {
    throw NumericError("outer iteration " + std::to_string(state.outer) + " evaluation: " + e.what());
  }
  row.distill_err = distill_err;
  row.kl_gap = estimate_kl_gap(state.current, next, *dp.last_cache);
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  state.previous = std::move(state.current);
  state.current = std::move(next);
  state.optimizer = std::move(dp.optimizer);
  state.outer += 1;
  state.log.push_back(row);
  if (hooks && hooks->on_outer) hooks->on_outer(state);
}

/// Runs outer iterations from state.outer up to cfg.outer_iterations.
inline AMPState run_amp(const AMPConfig& cfg, const DataSampler& sampler, bool with_oracle, const AMPHooks* hooks = nullptr,
                        std::optional<AMPState> resume = std::nullopt) {
  cfg.validate();
  {
    const Batch probe = sampler.draw(std::min<std::size_t>(cfg.cache_size, 1000) + 2, stream_key(cfg.seed, {0xFEED}));
    if ((empirical_moments(probe).variance.array() <= 0.0).any())
      throw InvalidArgument("initial distribution has zero variance; the bridge is degenerate");
  }
  AMPState state = resume ? std::move(*resume) : initial_state(cfg, sampler.dim);
  if (state.current.dim() != sampler.dim) throw InvalidArgument("resumed drift dimension does not match data");
  while (state.outer < cfg.outer_iterations) amp_outer_step(state, cfg, sampler, with_oracle, hooks);
  return state;
}

inline void write_metrics_header(std::ostream& out) {
  out << "outer_iter,terminal_mean,terminal_var,joint_cov,beta_target,kl_gap,distill_err\n";
}

inline void write_metrics_row(std::ostream& out, const OuterMetrics& r) {
  using io::format_double;
  out << r.outer_iter << ',' << format_double(r.terminal_mean) << ',' << format_double(r.terminal_var) << ','
      << format_double(r.joint_cov) << ',' << format_double(r.beta_target) << ',' << format_double(r.kl_gap) << ','
      << format_double(r.distill_err) << '\n';
}

inline void write_metrics_csv(std::ostream& out, const std::vector<OuterMetrics>& log) {
  write_metrics_header(out);
  for (const auto& r : log) write_metrics_row(out, r);
}

inline std::vector<OuterMetrics> read_metrics_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  std::vector<OuterMetrics> log;
  for (const auto& row : table.rows) {
    OuterMetrics r;
    r.outer_iter = static_cast<std::size_t>(std::stoull(row.at(table.column("outer_iter"))));
    r.terminal_mean = io::parse_double(row.at(table.column("terminal_mean")));
    r.terminal_var = io::parse_double(row.at(table.column("terminal_var")));
    r.joint_cov = io::parse_double(row.at(table.column("joint_cov")));
    r.beta_target = io::parse_double(row.at(table.column("beta_target")));
    r.kl_gap = io::parse_double(row.at(table.column("kl_gap")));
    r.distill_err = io::parse_double(row.at(table.column("distill_err")));
    log.push_back(r);
  }
  return log;
}

}  // namespace msb
