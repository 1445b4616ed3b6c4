#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msb/amp.hpp"
#include "msb/checkpoint.hpp"
#include "msb/config.hpp"
#include "msb/datasets.hpp"
#include "msb/errors.hpp"
#include "msb/gaussian_oracle.hpp"
#include "msb/io.hpp"
#include "msb/metrics.hpp"

namespace msb::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIntegrity = 4;

/// Runs fn and maps library exceptions onto the exit-code contract.
template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IntegrityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIntegrity;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

inline std::string outer_dir_name(std::size_t k) {
  std::ostringstream s;
  s << "outer_" << std::setw(4) << std::setfill('0') << k;
  return s.str();
}

inline void write_log_files(const fs::path& dir, const std::vector<OuterMetrics>& log) {
  std::ostringstream metrics, timing;
  write_metrics_csv(metrics, log);
  timing << "outer_iter,wall_seconds\n";
  for (const auto& r : log) timing << r.outer_iter << ',' << io::format_double(r.wall_seconds) << '\n';
  io::write_text(dir / "metrics.csv", metrics.str());
  io::write_text(dir / "timing.csv", timing.str());
}

inline bool oracle_applies(const RunConfig& cfg) { return cfg.oracle && cfg.dataset.kind == DatasetKind::gaussian; }

struct EvaluationRow {
  double sigma = 0.0;
  double terminal_mean = 0.0;
  double terminal_var = 0.0;
  double joint_cov = 0.0;
  double beta_target = std::numeric_limits<double>::quiet_NaN();
  double energy = 0.0;
  double energy_null = 0.0;
  double mixing = std::numeric_limits<double>::quiet_NaN();
};

/// Pushes fresh data through the bridge at each sigma and compares the
/// endpoints with independent data draws.
inline std::vector<EvaluationRow> evaluate_sigmas(const DriftModel& drift, const RunConfig& cfg) {
  DatasetSpec init_spec = cfg.dataset;
  init_spec.count = cfg.amp.eval_paths;
  init_spec.seed = stream_key(cfg.dataset.seed, {0xE7A1});
  const SampleBatch initial = sample_dataset(init_spec);
  DatasetSpec fresh_spec = init_spec;
  fresh_spec.seed = stream_key(cfg.dataset.seed, {0xF8E5});
  const SampleBatch fresh = sample_dataset(fresh_spec);
  fresh_spec.seed = stream_key(cfg.dataset.seed, {0xF8E6});
  const SampleBatch fresh2 = sample_dataset(fresh_spec);
  const double null_value = energy_distance(fresh2, fresh);
  const TimeGrid grid = cfg.amp.grid.build();

  std::vector<EvaluationRow> rows;
  for (std::size_t k = 0; k < cfg.eval_sigmas.size(); ++k) {
    const double sigma = cfg.eval_sigmas[k];
    const Eigen::VectorXd sig = Eigen::VectorXd::Constant(initial.points.cols(), sigma);
    const auto cache = simulate_cache(initial.points, drift, grid, sig, stream_key(cfg.amp.seed, {0xE7A1, k}),
                                      cfg.amp.blowup_guard);
    SampleBatch terminal{cache.states(cache.steps()), std::nullopt};
    const Moments m = empirical_moments(terminal, &initial);
    EvaluationRow row;
    row.sigma = sigma;
    row.terminal_mean = m.mean.mean();
    row.terminal_var = m.variance.mean();
    row.joint_cov = *m.joint_covariance;
    if (oracle_applies(cfg)) row.beta_target = beta(cfg.amp.alpha, sigma);
    row.energy = energy_distance(terminal, fresh);
    row.energy_null = null_value;
    if (initial.labels) {
      terminal.labels = assign_modes(cfg.dataset, terminal.points);
      row.mixing = mixing_rate(initial, terminal);
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_evaluation_csv(const fs::path& path, const std::vector<EvaluationRow>& rows) {
  using io::format_double;
  std::ostringstream out;
  out << "sigma,terminal_mean,terminal_var,joint_cov,beta_target,energy_distance,energy_null,mixing_rate\n";
  for (const auto& r : rows)
    out << format_double(r.sigma) << ',' << format_double(r.terminal_mean) << ',' << format_double(r.terminal_var)
        << ',' << format_double(r.joint_cov) << ',' << format_double(r.beta_target) << ',' << format_double(r.energy)
        << ',' << format_double(r.energy_null) << ',' << format_double(r.mixing) << '\n';
  io::write_text(path, out.str());
}

struct TrainOptions {
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<std::string> out;
  bool resume = false;
};

inline RunConfig resolve_config(const fs::path& path, std::vector<std::string> overrides,
                                const std::optional<std::string>& out) {
  if (out) overrides.push_back("output_dir=\"" + *out + "\"");
  return load_run_config(path, overrides);
}

/// Latest outer_K checkpoint with K <= limit whose metrics rows are complete.
inline std::optional<AMPState> load_resume_state(const fs::path& run_dir, const RunConfig& cfg, std::ostream& err) {
  const fs::path ck_root = run_dir / "checkpoints";
  if (!fs::exists(ck_root)) return std::nullopt;
  std::vector<OuterMetrics> log;
  if (fs::exists(run_dir / "metrics.csv")) log = read_metrics_csv(run_dir / "metrics.csv");
  std::optional<std::size_t> best;
  for (const auto& entry : fs::directory_iterator(ck_root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("outer_", 0) != 0 || !fs::exists(entry.path() / "checkpoint.json")) continue;
    const std::size_t k = std::stoul(name.substr(6));
    if (k <= cfg.amp.outer_iterations && k <= log.size() && (!best || k > *best)) best = k;
  }
  if (!best) return std::nullopt;
  const Checkpoint ck = read_checkpoint(ck_root / outer_dir_name(*best));
  AMPState state = initial_state(cfg.amp, cfg.dataset.data_dim());
  state.current = ck.drift;
  if (*best > 0) state.previous = read_checkpoint(ck_root / outer_dir_name(*best - 1)).drift;
  state.outer = *best;
  log.resize(*best);
  state.log = std::move(log);
  err << "resuming after outer iteration " << *best << '\n';
  return state;
}

inline int cmd_train(const TrainOptions& opt, std::ostream& err) {
  const RunConfig cfg = resolve_config(opt.config, opt.overrides, opt.out);
  const fs::path run_dir = run_directory(cfg);
  fs::create_directories(run_dir);
  io::write_text(run_dir / "config.json", to_json(cfg).dump(2) + "\n");
  err << "run directory: " << run_dir.string() << '\n';

  const DataSampler sampler = make_sampler(cfg.dataset);
  std::optional<AMPState> resume;
  if (opt.resume) resume = load_resume_state(run_dir, cfg, err);
  if (!resume) {
    const AMPState fresh = initial_state(cfg.amp, sampler.dim);
    write_checkpoint(run_dir / "checkpoints" / outer_dir_name(0), {0, cfg.amp.sigma_min, cfg.amp.sigma_max, fresh.current});
    write_log_files(run_dir, {});
  }

  AMPHooks hooks;
  hooks.warn = [&](const std::string& msg) { err << "warning: " << msg << '\n'; };
  hooks.on_outer = [&](const AMPState& s) {
    write_checkpoint(run_dir / "checkpoints" / outer_dir_name(s.outer), {s.outer, cfg.amp.sigma_min, cfg.amp.sigma_max, s.current});
    write_log_files(run_dir, s.log);
    const auto& r = s.log.back();
    err << "outer " << r.outer_iter << ": mean " << r.terminal_mean << " var " << r.terminal_var << " cov "
        << r.joint_cov << " kl_gap " << r.kl_gap << '\n';
  };
  const AMPState final_state = run_amp(cfg.amp, sampler, oracle_applies(cfg), &hooks, std::move(resume));
  write_checkpoint(run_dir / "final", {final_state.outer, cfg.amp.sigma_min, cfg.amp.sigma_max, final_state.current});
  if (cfg.amp.outer_iterations > 0) write_evaluation_csv(run_dir / "evaluation.csv", evaluate_sigmas(final_state.current, cfg));
  return kExitOk;
}

struct SampleOptions {
  fs::path checkpoint;
  fs::path input;
  fs::path output;
  double sigma = 1.0;
  std::size_t steps = 20;
  std::uint64_t seed = 0;
};

inline int cmd_sample(const SampleOptions& opt, std::ostream& err) {
  const Checkpoint ck = read_checkpoint(opt.checkpoint);
  if (!(opt.sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (opt.sigma < ck.sigma_min || opt.sigma > ck.sigma_max)
    err << "warning: sigma " << opt.sigma << " lies outside the trained range [" << ck.sigma_min << ", "
        << ck.sigma_max << "]; extrapolation\n";
  const SampleBatch input = read_sample_csv(opt.input);
  if (input.dim() != ck.drift.dim()) throw InvalidArgument("input dimension does not match the checkpoint drift");
  const TimeGrid grid = make_time_grid(GridMode::uniform, opt.steps, 1.0, 1.0);
  const Eigen::VectorXd sig = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(input.size()), opt.sigma);
  const auto cache = simulate_cache(input.points, ck.drift, grid, sig, opt.seed);
  const Batch& x1 = cache.states(cache.steps());

  std::ostringstream out;
  out << "idx";
  for (std::size_t k = 0; k < input.dim(); ++k) out << ",x0_" << k;
  for (std::size_t k = 0; k < input.dim(); ++k) out << ",x1_" << k;
  out << '\n';
  for (Eigen::Index j = 0; j < x1.cols(); ++j) {
    out << j;
    for (Eigen::Index k = 0; k < x1.rows(); ++k) out << ',' << io::format_double(input.points(k, j));
    for (Eigen::Index k = 0; k < x1.rows(); ++k) out << ',' << io::format_double(x1(k, j));
    out << '\n';
  }
  io::write_text(opt.output, out.str());
  return kExitOk;
}

struct OracleOptions {
  double alpha = 1.0;
  double sigma = 1.0;
  std::vector<double> grid;  // empty, or {n, L}
};

inline int cmd_oracle(const OracleOptions& opt, std::ostream& out) {
  if (!(opt.alpha > 0.0) || !(opt.sigma > 0.0)) throw InvalidArgument("alpha and sigma must be positive");
  const auto sol = solve_gaussian_bridge(opt.alpha, opt.sigma);
  nlohmann::json doc = {{"alpha", opt.alpha}, {"sigma", opt.sigma}, {"beta", sol.beta}, {"sigma1_sq", sol.sigma1_sq}};
  if (!opt.grid.empty()) {
    if (opt.grid.size() != 2 || opt.grid[0] < 1.0 || opt.grid[0] != std::floor(opt.grid[0]))
      throw InvalidArgument("--grid expects an integer size and a half-width");
    const auto gb = solve_grid_bridge(opt.alpha, opt.sigma, static_cast<std::size_t>(opt.grid[0]), opt.grid[1]);
    doc["grid_cov"] = gb.covariance();
    doc["grid_discrepancy"] = std::abs(gb.covariance() - sol.beta);
    doc["grid_iterations"] = gb.iterations;
  }
  out << doc.dump() << '\n';
  return kExitOk;
}

struct ConvergenceOptions {
  fs::path config;
  std::vector<std::string> overrides;
  std::optional<std::string> out;
};

/// Writes trial_<k>/metrics.csv, trials.csv (all rows with a trial column)
/// and averaged.csv under <run dir>/convergence.
inline int cmd_convergence(const ConvergenceOptions& opt, std::ostream& err) {
  const RunConfig cfg = resolve_config(opt.config, opt.overrides, opt.out);
  if (cfg.dataset.kind != DatasetKind::gaussian) throw ConfigError("convergence needs a gaussian dataset");
  const fs::path run_dir = run_directory(cfg);
  const fs::path dir = run_dir / "convergence";
  fs::create_directories(dir);
  io::write_text(run_dir / "config.json", to_json(cfg).dump(2) + "\n");
  err << "run directory: " << run_dir.string() << '\n';

  const DataSampler sampler = make_sampler(cfg.dataset);
  std::vector<std::vector<OuterMetrics>> logs;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    AMPConfig amp = cfg.amp;
    amp.seed = cfg.amp.seed + trial;
    AMPHooks hooks;
    hooks.warn = [&](const std::string& msg) { err << "warning: trial " << trial << ": " << msg << '\n'; };
    hooks.on_outer = [&](const AMPState& s) {
      const auto& r = s.log.back();
      err << "trial " << trial << " outer " << r.outer_iter << ": var " << r.terminal_var << " cov " << r.joint_cov << '\n';
    };
    const AMPState state = run_amp(amp, sampler, oracle_applies(cfg), &hooks);
    const fs::path tdir = dir / ("trial_" + std::to_string(trial));
    write_log_files(tdir, state.log);
    write_checkpoint(tdir / "final", {state.outer, amp.sigma_min, amp.sigma_max, state.current});
    logs.push_back(state.log);
  }

  using io::format_double;
  std::ostringstream all;
  all << "trial,seed,outer_iter,terminal_mean,terminal_var,joint_cov,beta_target,kl_gap,distill_err\n";
  for (std::size_t t = 0; t < logs.size(); ++t)
    for (const auto& r : logs[t]) {
      std::ostringstream row;
      write_metrics_row(row, r);
      all << t << ',' << cfg.amp.seed + t << ',' << row.str();
    }
  io::write_text(dir / "trials.csv", all.str());

  std::vector<OuterMetrics> avg(cfg.amp.outer_iterations);
  const double inv = 1.0 / static_cast<double>(logs.size());
  for (std::size_t k = 0; k < avg.size(); ++k) {
    avg[k].outer_iter = k + 1;
    avg[k].beta_target = logs.front()[k].beta_target;
    for (const auto& log : logs) {
      avg[k].terminal_mean += log[k].terminal_mean * inv;
      avg[k].terminal_var += log[k].terminal_var * inv;
      avg[k].joint_cov += log[k].joint_cov * inv;
      avg[k].kl_gap += log[k].kl_gap * inv;
      avg[k].distill_err += log[k].distill_err * inv;
    }
  }
  std::ostringstream averaged;
  write_metrics_csv(averaged, avg);
  io::write_text(dir / "averaged.csv", averaged.str());
  if (!avg.empty()) {
    const auto& r = avg.back();
    err << "averaged final: mean " << r.terminal_mean << " var " << r.terminal_var << " cov " << r.joint_cov;
    if (!std::isnan(r.beta_target)) err << " beta " << r.beta_target;
    err << '\n';
  }
  return kExitOk;
}

/// Full command line. Data goes to files; stdout carries only oracle JSON.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Mirror Schrodinger bridges: train, sample, and check against the Gaussian oracle", "msb"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Run the alternating minimization and write checkpoints and metrics");
  t->add_option("config", train.config, "Run configuration (JSON)")->required();
  t->add_option("--set", train.overrides, "Override a scalar field, e.g. --set amp.outer_iterations=5");
  t->add_option("--out", train.out, "Output directory (overrides output_dir)");
  t->add_flag("--resume", train.resume, "Continue from the latest checkpoint in the run directory");

  SampleOptions sample;
  auto* s = app.add_subcommand("sample", "Push input points through a trained bridge");
  s->add_option("checkpoint", sample.checkpoint, "Checkpoint directory or checkpoint.json")->required();
  s->add_option("input", sample.input, "Input sample CSV (idx, x_0.., label)")->required();
  s->add_option("-o,--out", sample.output, "Paired output CSV")->required();
  s->add_option("--sigma", sample.sigma, "Noise level")->capture_default_str();
  s->add_option("--steps", sample.steps, "Uniform Euler-Maruyama steps")->capture_default_str()->check(CLI::Range(2, 1000000));
  s->add_option("--seed", sample.seed, "Noise seed")->capture_default_str();

  OracleOptions oracle;
  auto* o = app.add_subcommand("oracle", "Print the closed-form Gaussian bridge as JSON");
  o->add_option("alpha", oracle.alpha, "OU mean reversion")->required();
  o->add_option("sigma", oracle.sigma, "Noise level")->required();
  o->add_option("--grid", oracle.grid, "Also solve the grid bridge: size and half-width")->expected(2);

  ConvergenceOptions conv;
  auto* c = app.add_subcommand("convergence", "Seeded repeated trials on Gaussian data");
  c->add_option("config", conv.config, "Run configuration (JSON)")->required();
  c->add_option("--set", conv.overrides, "Override a scalar field");
  c->add_option("--out", conv.out, "Output directory (overrides output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  if (t->parsed()) return guarded(err, [&] { return cmd_train(train, err); });
  if (s->parsed()) return guarded(err, [&] { return cmd_sample(sample, err); });
  if (o->parsed()) return guarded(err, [&] { return cmd_oracle(oracle, out); });
  return guarded(err, [&] { return cmd_convergence(conv, err); });
}

}  // namespace msb::cli
