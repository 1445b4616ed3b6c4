// End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//   acceptance --work DIR [--only 1,3,5]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "msb/cli.hpp"

namespace fs = std::filesystem;
using namespace msb;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path work;
  fs::path configs = MSB_CONFIG_DIR;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

/// Runs the command line in-process with its stderr captured to a log file.
int run_cli(const Context& ctx, const std::string& log_name, std::vector<std::string> args) {
  fs::create_directories(ctx.work / "logs");
  std::ofstream log(ctx.work / "logs" / (log_name + ".log"));
  args.insert(args.begin(), "msb");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, log);
  log << out.str();
  return code;
}

fs::path convergence_dir(const fs::path& config, const fs::path& out) {
  return run_directory(cli::resolve_config(config, {}, out.string())) / "convergence";
}

/// Runs the convergence command fresh into work/<name> and returns its directory.
std::optional<fs::path> fresh_convergence(const Context& ctx, const std::string& config, const std::string& name,
                                          std::string& detail) {
  const fs::path cfg = ctx.configs / config;
  const fs::path out = ctx.work / name;
  fs::remove_all(out);
  const int code = run_cli(ctx, name, {"convergence", cfg.string(), "--out", out.string()});
  if (code != 0) {
    detail = "convergence command exited with " + std::to_string(code) + " (see logs/" + name + ".log)";
    return std::nullopt;
  }
  return convergence_dir(cfg, out);
}

Outcome gaussian_convergence(const Context& ctx, const std::string& config, const std::string& name, double cov_tol,
                             bool check_mean) {
  Outcome o;
  const auto dir = fresh_convergence(ctx, config, name, o.detail);
  if (!dir) return o;
  const auto avg = read_metrics_csv(*dir / "averaged.csv");
  if (avg.empty()) return {false, "no averaged rows"};
  const auto& r = avg.back();
  const double beta_value = r.beta_target;
  const bool cov_ok = std::abs(r.joint_cov - beta_value) <= cov_tol;
  const bool mean_ok = !check_mean || std::abs(r.terminal_mean) <= 0.02;
  const bool var_ok = std::abs(r.terminal_var - 1.0) <= 0.05;
  o.pass = cov_ok && mean_ok && var_ok;
  o.detail = "cov " + fmt(r.joint_cov) + " vs beta " + fmt(beta_value) + " (tol " + fmt(cov_tol) + "), mean " +
             fmt(r.terminal_mean, 3) + ", var " + fmt(r.terminal_var) + ", kl_gap " + fmt(r.kl_gap, 3);
  return o;
}

Outcome criterion1(const Context& ctx) { return gaussian_convergence(ctx, "gaussian1d.json", "c1", 0.02, true); }

Outcome criterion2(const Context& ctx) { return gaussian_convergence(ctx, "gaussian5d_neural.json", "c2", 0.05, false); }

Outcome criterion3(const Context&) {
  double worst = 0.0;
  std::string where;
  for (double a : {0.5, 1.0, 2.0})
    for (double s : {0.5, 1.0, 2.0, 5.0}) {
      const double gap = std::abs(solve_grid_bridge(a, s).covariance() - beta(a, s));
      if (gap >= worst) {
        worst = gap;
        where = "alpha " + fmt(a) + " sigma " + fmt(s);
      }
    }
  return {worst < 0.01, "max |beta - grid cov| " + fmt(worst, 3) + " at " + where};
}

Outcome criterion4(const Context& ctx) {
  std::size_t calls = 0, probes = 0;
  double worst_ulps = 0.0;
  AMPHooks hooks;
  double sigma_lo = 1.0, sigma_hi = 1.0;
  hooks.on_reverse = [&](const DriftModel& f, const DriftModel& b, const DriftModel& v) {
    CounterRng rng(stream_key(0xACCE, {calls++}));
    for (int k = 0; k < 1000; ++k, ++probes) {
      const double t = rng.uniform();
      const double s = rng.uniform(sigma_lo, sigma_hi);
      Point x(static_cast<Eigen::Index>(f.dim()));
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = 3.0 * rng.normal();
      const Point got = v.eval(t, x, s);
      const Point want = 0.5 * (f.eval(t, x, s) + b.eval(t, x, s));
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double unit = std::nextafter(std::abs(want[i]), INFINITY) - std::abs(want[i]);
        worst_ulps = std::max(worst_ulps, std::abs(got[i] - want[i]) / unit);
      }
    }
  };

  const RunConfig affine = load_run_config(ctx.configs / "gaussian1d.json");
  run_amp(affine.amp, make_sampler(affine.dataset), false, &hooks);

  AMPConfig neural = load_run_config(ctx.configs / "gaussian5d_neural.json").amp;
  neural.outer_iterations = 3;
  neural.inner_iterations = 200;
  neural.cache_size = 2000;
  neural.eval_paths = 2000;
  neural.distill_iterations = 50;
  DatasetSpec spec;
  spec.dim = 2;
  sigma_lo = neural.sigma_min;
  sigma_hi = neural.sigma_max;
  run_amp(neural, make_sampler(spec), false, &hooks);

  return {calls > 0 && worst_ulps <= 1.0,
          std::to_string(calls) + " reverse projections, " + std::to_string(probes) + " probes, worst " +
              fmt(worst_ulps, 3) + " ulp"};
}

Outcome criterion5(const Context&) {
  const std::size_t paths = 100000, chunk = 5000, steps = 1000;
  const auto ou = DriftModel::ou(1.0, 1);
  const OUReference ref(1.0);
  const Point x0 = Point::Constant(1, 1.0);
  const auto stats = ou_transition_stats(ref, 1.0, x0, 1.0);
  const TimeGrid grid = make_time_grid(GridMode::uniform, steps, 0, 0);

  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t c = 0; c < paths / chunk; ++c) {
    const auto cache = simulate_cache(Batch::Constant(1, chunk, 1.0), ou, grid, Eigen::VectorXd::Ones(chunk),
                                      stream_key(0xE0E0, {c}));
    const Batch& x1 = cache.states(steps);
    sum += x1.sum();
    sum_sq += x1.squaredNorm();
  }
  const double n = static_cast<double>(paths);
  const double mean = sum / n;
  const double var = (sum_sq - n * mean * mean) / (n - 1.0);
  const double var_th = stats.variance;
  const double mean_se = std::sqrt(var_th / n);
  const double var_se = var_th * std::sqrt(2.0 / (n - 1.0));
  const double mean_z = (mean - stats.mean[0]) / mean_se;
  const double var_z = (var - var_th) / var_se;

  const auto det = simulate_cache(Batch::Constant(1, 1, 1.0), ou, grid, Eigen::VectorXd::Zero(1), 0);
  const double det_err = std::abs(det.states(steps)(0, 0) - std::exp(-1.0));

  return {std::abs(mean_z) <= 4.0 && std::abs(var_z) <= 4.0 && det_err <= 2e-3,
          "mean " + fmt(mean, 6) + " (z " + fmt(mean_z, 3) + "), var " + fmt(var, 6) + " (z " + fmt(var_z, 3) +
              "), sigma=0 error " + fmt(det_err, 3)};
}

Outcome criterion6(const Context&) {
  CounterRng rng(0x6AD);
  double worst = 0.0;
  const int configs = 6;
  for (int k = 0; k < configs; ++k) {
    auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.next_u64() % n); };
    const MLPArchitecture arch{1 + pick(5), 3 + pick(14), 1 + pick(3), pick(5)};
    const auto params = MLPParams::initialize(arch, stream_key(0x6AD, {static_cast<std::uint64_t>(k)}));
    const Eigen::Index n = 8;
    RegressionBatch b;
    b.t.resize(n);
    b.sigma.resize(n);
    b.x.resize(static_cast<Eigen::Index>(arch.dim), n);
    b.target.resize(static_cast<Eigen::Index>(arch.dim), n);
    for (Eigen::Index j = 0; j < n; ++j) {
      b.t[j] = rng.uniform();
      b.sigma[j] = rng.uniform(1, 5);
      for (Eigen::Index i = 0; i < b.x.rows(); ++i) {
        b.x(i, j) = rng.normal();
        b.target(i, j) = rng.normal();
      }
    }
    if (k % 2 == 1) b.weight = (1.0 / b.sigma.array().square()).matrix();

    const auto lg = loss_and_gradient(params, b);
    for (std::size_t l = 0; l < params.layers().size(); ++l)
      for (bool bias : {false, true}) {
        const auto& layer = params.layers()[l];
        const Eigen::Index rows = layer.weight.rows(), cols = bias ? 1 : layer.weight.cols();
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) {
            auto entry = [&](MLPParams& p) -> double& {
              auto& ly = p.layers()[l];
              return bias ? ly.bias[r] : ly.weight(r, c);
            };
            MLPParams plus = params, minus = params, grad = lg.grad;
            const double h = 1e-6;
            entry(plus) += h;
            entry(minus) -= h;
            const double numeric = (loss_and_gradient(plus, b).loss - loss_and_gradient(minus, b).loss) / (2.0 * h);
            const double analytic = entry(grad);
            worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic)));
          }
      }
  }
  return {worst < 1e-4, std::to_string(configs) + " configurations, max relative error " + fmt(worst, 3)};
}

/// Splits a CSV with a header into named columns.
std::map<std::string, std::vector<double>> read_columns(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> names;
  {
    std::istringstream h(line);
    for (std::string cell; std::getline(h, cell, ',');) names.push_back(cell);
  }
  std::map<std::string, std::vector<double>> cols;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::size_t k = 0;
    for (std::string cell; std::getline(row, cell, ','); ++k)
      cols[names.at(k)].push_back(cell.empty() ? std::nan("") : std::stod(cell));
  }
  return cols;
}

Outcome criterion7(const Context& ctx) {
  const fs::path cfg = ctx.configs / "two_circles.json";
  const fs::path out = ctx.work / "c7";
  fs::remove_all(out);
  const int code = run_cli(ctx, "c7", {"train", cfg.string(), "--out", out.string()});
  if (code != 0) return {false, "train exited with " + std::to_string(code) + " (see logs/c7.log)"};
  auto cols = read_columns(run_directory(cli::resolve_config(cfg, {}, out.string())) / "evaluation.csv");
  const auto& sigma = cols["sigma"];
  const auto& mixing = cols["mixing_rate"];
  const auto& energy = cols["energy_distance"];
  const auto& null = cols["energy_null"];
  if (sigma.size() < 2 || sigma.front() != 1.0 || sigma.back() != 9.0) return {false, "evaluation.csv lacks sigma 1 and 9"};

  const double rho = spearman(sigma, mixing);
  double worst_ratio = 0.0;
  std::ostringstream per;
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    worst_ratio = std::max(worst_ratio, energy[k] / null[k]);
    per << (k ? "; " : "") << "sigma " << fmt(sigma[k]) << ": mixing " << fmt(mixing[k], 3) << ", energy "
        << fmt(energy[k], 3) << " (" << fmt(energy[k] / null[k], 3) << "x null)";
  }
  const bool pass = mixing.front() < mixing.back() && rho > 0.0 && worst_ratio < 3.0;
  return {pass, "spearman " + fmt(rho, 3) + ", worst energy " + fmt(worst_ratio, 3) + "x null; " + per.str()};
}

Outcome criterion8(const Context& ctx) {
  const fs::path cfg_path = ctx.configs / "gaussian1d.json";
  fs::path dir = convergence_dir(cfg_path, ctx.work / "c1");
  if (!fs::exists(dir / "trial_0" / "final" / "checkpoint.json")) {
    std::string detail;
    const auto made = fresh_convergence(ctx, "gaussian1d.json", "c1", detail);
    if (!made) return {false, detail};
    dir = *made;
  }
  const Checkpoint ck = read_checkpoint(dir / "trial_0" / "final");
  const RunConfig cfg = load_run_config(cfg_path);
  DatasetSpec spec = cfg.dataset;
  spec.count = 200000;
  spec.seed = stream_key(cfg.dataset.seed, {0xC08D});
  const SampleBatch x0 = sample_dataset(spec);
  const auto cache = simulate_cache(x0.points, ck.drift, cfg.amp.grid.build(), Eigen::VectorXd::Ones(x0.points.cols()),
                                    stream_key(0xC08D, {1}));
  const Batch& x1 = cache.states(cache.steps());
  double sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index j = 0; j < x1.cols(); ++j)
    if (x0.points(0, j) >= 0.9 && x0.points(0, j) <= 1.1) {
      sum += x1(0, j);
      ++count;
    }
  if (count == 0) return {false, "no initial points in [0.9, 1.1]"};
  const double m = sum / static_cast<double>(count);
  const double b = beta(cfg.amp.alpha, 1.0);
  const double alt = b / (1.0 - b * b);
  return {std::abs(m - b) <= 0.08,
          "E[X1 | X0 in [0.9,1.1]] = " + fmt(m) + " over " + std::to_string(count) + " paths; |m - beta| " +
              fmt(std::abs(m - b), 3) + ", |m - beta/(1-beta^2)| " + fmt(std::abs(m - alt), 3)};
}

Outcome criterion9(const Context& ctx) {
  const fs::path cfg = ctx.configs / "gaussian1d.json";
  std::string detail;
  const auto first = fresh_convergence(ctx, "gaussian1d.json", "c9a", detail);
  if (!first) return {false, detail};
  const auto second = fresh_convergence(ctx, "gaussian1d.json", "c9b", detail);
  if (!second) return {false, detail};
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(*first)) {
    if (entry.path().extension() != ".csv") continue;
    const fs::path rel = fs::relative(entry.path(), *first);
    if (rel.filename() == "timing.csv") continue;
    if (!fs::exists(*second / rel) || io::read_text(entry.path()) != io::read_text(*second / rel))
      return {false, rel.string() + " differs between identical runs"};
    ++compared;
  }
  return {compared > 0, std::to_string(compared) + " metric CSVs identical across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the mirror bridge trainer", "acceptance"};
  Context ctx;
  ctx.work = "acceptance_runs";
  std::vector<int> only, expect_fail;
  app.add_option("--work", ctx.work, "Scratch directory for runs")->capture_default_str();
  app.add_option("--configs", ctx.configs, "Directory holding the run configurations")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--expect-fail", expect_fail, "Criteria known to fail; still reported, not counted")
      ->delimiter(',')
      ->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  using Fn = Outcome (*)(const Context&);
  const std::vector<std::pair<std::string, Fn>> criteria = {
      {"affine Gaussian convergence, d=1", criterion1},
      {"neural Gaussian convergence, d=5", criterion2},
      {"closed form vs grid bridge", criterion3},
      {"reverse projection exactness", criterion4},
      {"Euler-Maruyama moments", criterion5},
      {"gradient check", criterion6},
      {"sigma-controlled mixing, two circles", criterion7},
      {"conditional mean on the d=1 bridge", criterion8},
      {"bitwise determinism", criterion9},
  };
  const std::set<int> selected(only.begin(), only.end());
  const std::set<int> known(expect_fail.begin(), expect_fail.end());
  fs::create_directories(ctx.work);

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass && !known.count(id)) ++failures;
    std::cout << "criterion " << id << " (" << criteria[k].first << "): " << (o.pass ? "PASS" : "FAIL") << " -- "
              << o.detail << " [" << fmt(secs, 3) << " s]";
    if (!o.pass && known.count(id)) std::cout << " (known failure)";
    std::cout << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
