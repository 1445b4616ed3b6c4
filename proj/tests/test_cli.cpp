#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "msb/cli.hpp"

namespace fs = std::filesystem;
using namespace msb;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "msb");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("msb_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    io::write_text(dir_ / name, text);
    return dir_ / name;
  }

  /// Small affine Gaussian run.
  fs::path small_config(std::size_t outer = 3) const {
    nlohmann::json doc = {{"amp",
                           {{"family", "affine"},
                            {"outer_iterations", outer},
                            {"inner_iterations", 500},
                            {"refresh_period", 500},
                            {"cache_size", 1000},
                            {"eval_paths", 1000},
                            {"sigma_min", 1.0},
                            {"sigma_max", 2.0}}},
                          {"dataset", {{"kind", "gaussian"}, {"dim", 1}}},
                          {"output_dir", (dir_ / "runs").string()},
                          {"eval_sigmas", {1.0, 2.0}},
                          {"trials", 2}};
    return write("config.json", doc.dump(2));
  }

  fs::path run_dir_for(const fs::path& config) const { return run_directory(load_run_config(config)); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, OraclePrintsJson) {
  const auto r = run_cli({"oracle", "1", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_NEAR(doc["beta"].get<double>(), 0.57225907632199, 1e-8);
  EXPECT_NEAR(doc["sigma1_sq"].get<double>(), 0.432332358381694, 1e-12);
  EXPECT_FALSE(doc.contains("grid_cov"));
}

TEST_F(CliTest, OracleGridOption) {
  const auto r = run_cli({"oracle", "1", "1", "--grid", "201", "6"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(r.out);
  EXPECT_LT(doc["grid_discrepancy"].get<double>(), 5e-3);
  EXPECT_GT(doc["grid_iterations"].get<int>(), 0);
}

TEST_F(CliTest, OracleRejectsBadArguments) {
  EXPECT_EQ(run_cli({"oracle", "0", "1"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"oracle", "1"}).code, cli::kExitConfig);
  EXPECT_EQ(run_cli({"frobnicate"}).code, cli::kExitConfig);
}

TEST_F(CliTest, TrainZeroOuterWritesReference) {
  const auto cfg = small_config(0);
  const auto r = run_cli({"train", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto run = run_dir_for(cfg);
  EXPECT_TRUE(fs::exists(run / "config.json"));
  EXPECT_EQ(read_checkpoint(run / "final").drift.kind(), DriftKind::ou);
  EXPECT_TRUE(read_metrics_csv(run / "metrics.csv").empty());
  EXPECT_FALSE(fs::exists(run / "evaluation.csv"));
}

TEST_F(CliTest, TrainMalformedConfig) {
  const auto bad = write("bad.json", "{\"amp\": {\"seed\": 1,}}");
  const auto r = run_cli({"train", bad.string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("at byte"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainUnknownKey) {
  const auto bad = write("bad.json", R"({"amp": {"outer_iters": 3}})");
  const auto r = run_cli({"train", bad.string()});
  EXPECT_EQ(r.code, cli::kExitConfig);
  EXPECT_NE(r.err.find("amp.outer_iters"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainWritesArtifacts) {
  const auto cfg = small_config();
  const auto r = run_cli({"train", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto run = run_dir_for(cfg);
  EXPECT_EQ(read_metrics_csv(run / "metrics.csv").size(), 3u);
  for (std::size_t k = 0; k <= 3; ++k) EXPECT_TRUE(fs::exists(run / "checkpoints" / cli::outer_dir_name(k) / "checkpoint.json"));
  const auto eval = io::read_text(run / "evaluation.csv");
  EXPECT_EQ(eval.rfind("sigma,terminal_mean,terminal_var,joint_cov,beta_target,energy_distance,energy_null,mixing_rate\n", 0), 0u);
  EXPECT_EQ(std::count(eval.begin(), eval.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(run / "timing.csv"));
}

TEST_F(CliTest, OverrideChangesRunDirectory) {
  const auto cfg = small_config(0);
  ASSERT_EQ(run_cli({"train", cfg.string(), "--set", "amp.seed=9"}).code, 0);
  const auto r = run_cli({"train", cfg.string(), "--set", "amp.seedz=9"});
  EXPECT_EQ(r.code, cli::kExitConfig);
  RunConfig expected = load_run_config(cfg, {"amp.seed=9"});
  EXPECT_TRUE(fs::exists(run_directory(expected) / "final"));
}

TEST_F(CliTest, ResumeMatchesUninterruptedRun) {
  const auto cfg = small_config(4);
  ASSERT_EQ(run_cli({"train", cfg.string()}).code, 0);
  const auto run = run_dir_for(cfg);
  const std::string metrics = io::read_text(run / "metrics.csv");
  const std::string final_ck = io::read_text(run / "final" / "checkpoint.json");

  // Simulate a crash after outer iteration 2 whose checkpoint 3 write was partial.
  auto log = read_metrics_csv(run / "metrics.csv");
  log.resize(2);
  cli::write_log_files(run, log);
  fs::remove(run / "checkpoints" / cli::outer_dir_name(3) / "checkpoint.json");
  fs::remove_all(run / "checkpoints" / cli::outer_dir_name(4));
  fs::remove_all(run / "final");

  const auto r = run_cli({"train", cfg.string(), "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("resuming after outer iteration 2"), std::string::npos) << r.err;
  EXPECT_EQ(io::read_text(run / "metrics.csv"), metrics);
  EXPECT_EQ(io::read_text(run / "final" / "checkpoint.json"), final_ck);
}

TEST_F(CliTest, SampleInAndOutOfRange) {
  const auto cfg = small_config(2);
  ASSERT_EQ(run_cli({"train", cfg.string()}).code, 0);
  const auto ck = run_dir_for(cfg) / "final";
  DatasetSpec spec;
  spec.count = 50;
  std::ofstream(dir_ / "in.csv") << [&] {
    std::ostringstream s;
    write_sample_csv(sample_dataset(spec), s);
    return s.str();
  }();

  auto r = run_cli({"sample", ck.string(), (dir_ / "in.csv").string(), "-o", (dir_ / "out.csv").string(), "--sigma", "1.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.err.find("extrapolation"), std::string::npos);
  const auto text = io::read_text(dir_ / "out.csv");
  EXPECT_EQ(text.rfind("idx,x0_0,x1_0\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 51);

  r = run_cli({"sample", ck.string(), (dir_ / "in.csv").string(), "-o", (dir_ / "out2.csv").string(), "--sigma", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("extrapolation"), std::string::npos);
}

TEST_F(CliTest, TamperedCheckpointIsIntegrityError) {
  const auto ck = dir_ / "neural_ck";
  write_checkpoint(ck, {1, 1.0, 2.0, DriftModel::neural(MLPParams::initialize({1, 8, 2, 2}, 4))});
  DatasetSpec spec;
  spec.count = 5;
  std::ofstream(dir_ / "in.csv") << [&] {
    std::ostringstream s;
    write_sample_csv(sample_dataset(spec), s);
    return s.str();
  }();
  bool tampered = false;
  for (const auto& e : fs::directory_iterator(ck)) {
    if (e.path().filename() == "checkpoint.json") continue;
    std::fstream f(e.path(), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    f.put('\x7f');
    tampered = true;
  }
  ASSERT_TRUE(tampered);
  EXPECT_THROW(read_checkpoint(ck), IntegrityError);
  const auto r = run_cli({"sample", ck.string(), (dir_ / "in.csv").string(), "-o", (dir_ / "out.csv").string()});
  EXPECT_EQ(r.code, cli::kExitIntegrity) << r.err;
  EXPECT_EQ(run_cli({"sample", (dir_ / "nowhere").string(), (dir_ / "in.csv").string(), "-o", (dir_ / "o.csv").string()}).code,
            cli::kExitIntegrity);
}

TEST_F(CliTest, BlowupIsNumericError) {
  const auto cfg = small_config(1);
  const auto r = run_cli({"train", cfg.string(), "--set", "amp.blowup_guard=0.001"});
  EXPECT_EQ(r.code, cli::kExitNumeric) << r.err;
}

TEST_F(CliTest, ConvergenceWritesTrials) {
  const auto cfg = small_config(2);
  const auto r = run_cli({"convergence", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto dir = run_dir_for(cfg) / "convergence";
  EXPECT_EQ(read_metrics_csv(dir / "averaged.csv").size(), 2u);
  EXPECT_EQ(read_metrics_csv(dir / "trial_1" / "metrics.csv").size(), 2u);
  const auto trials = io::read_text(dir / "trials.csv");
  EXPECT_EQ(std::count(trials.begin(), trials.end(), '\n'), 5);
  EXPECT_EQ(run_cli({"convergence", cfg.string(), "--set", "dataset.kind=moons", "--set", "dataset.dim=2"}).code,
            cli::kExitConfig);
}

TEST_F(CliTest, BinaryExitCodes) {
  const std::string bin = MSB_CLI_PATH;
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status(bin + " oracle 1 1"), 0);
  EXPECT_EQ(status(bin + " train " + write("bad.json", "{").string()), cli::kExitConfig);
  EXPECT_EQ(status(bin + " --help"), 0);
}
