#include <gtest/gtest.h>

#include <filesystem>

#include "msb/config.hpp"

using namespace msb;

namespace {

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfig, JsonRoundTrip) {
  RunConfig cfg;
  cfg.amp.family = DriftFamily::affine;
  cfg.amp.correction = CorrectionSign::minus;
  cfg.amp.correction_time = CorrectionTime::next;
  cfg.amp.weighting = LossWeighting::inverse_variance;
  cfg.amp.grid.mode = GridMode::uniform;
  cfg.amp.sigma_max = 2.5;
  cfg.amp.seed = 17;
  cfg.dataset.kind = DatasetKind::two_circles;
  cfg.dataset.jitter = 0.125;
  cfg.eval_sigmas = {1.0, 3.0};
  cfg.trials = 2;
  const RunConfig back = run_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
  EXPECT_EQ(config_hash(back), config_hash(cfg));
}

TEST(RunConfig, DefaultsFillMissingKeys) {
  const RunConfig cfg = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(cfg.amp.outer_iterations, 20u);
  EXPECT_EQ(cfg.amp.family, DriftFamily::neural);
  EXPECT_EQ(cfg.dataset.kind, DatasetKind::gaussian);
}

TEST(RunConfig, UnknownKeyNamesFullPath) {
  const auto msg = message_of([] { run_config_from_json(nlohmann::json::parse(R"({"amp":{"grid":{"stepz":3}}})")); });
  EXPECT_NE(msg.find("amp.grid.stepz"), std::string::npos) << msg;
}

TEST(RunConfig, WrongTypeIsConfigError) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"amp":{"outer_iterations":"many"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"amp":{"family":"quadratic"}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"amp":3})")), ConfigError);
}

TEST(RunConfig, InvalidValuesAreConfigErrors) {
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"amp":{"sigma_min":0}})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"eval_sigmas":[]})")), ConfigError);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"trials":0})")), ConfigError);
}

TEST(ParseJson, ReportsByteOffset) {
  // The stray brace is the 20th byte.
  const auto msg = message_of([] { parse_json_text("{\"amp\": {\"seed\": 1,}}", "inline"); });
  EXPECT_NE(msg.find("at byte 20"), std::string::npos) << msg;
}

TEST(Overrides, SetsNestedScalars) {
  nlohmann::json doc = nlohmann::json::object();
  apply_override(doc, "amp.outer_iterations=3");
  apply_override(doc, "amp.family=affine");
  apply_override(doc, "amp.grid.gamma_max=0.05");
  apply_override(doc, "oracle=false");
  const RunConfig cfg = run_config_from_json(doc);
  EXPECT_EQ(cfg.amp.outer_iterations, 3u);
  EXPECT_EQ(cfg.amp.family, DriftFamily::affine);
  EXPECT_EQ(cfg.amp.grid.gamma_max, 0.05);
  EXPECT_FALSE(cfg.oracle);
}

TEST(Overrides, RejectsMalformedAssignments) {
  nlohmann::json doc = nlohmann::json::object();
  EXPECT_THROW(apply_override(doc, "amp.seed"), ConfigError);
  EXPECT_THROW(apply_override(doc, "=3"), ConfigError);
  EXPECT_THROW(apply_override(doc, "amp..seed=3"), ConfigError);
  EXPECT_THROW(apply_override(doc, "eval_sigmas=[1,2]"), ConfigError);
  doc["oracle"] = true;
  EXPECT_THROW(apply_override(doc, "oracle.x=1"), ConfigError);
}

TEST(ConfigHash, StableAndSensitive) {
  RunConfig a;
  RunConfig b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 64u);
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(run_directory(b), std::filesystem::path("elsewhere") / ("run-" + config_hash(a).substr(0, 16)));
  b.amp.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(LoadRunConfig, MissingFileIsConfigError) {
  EXPECT_THROW(load_run_config("/nonexistent/msb/config.json"), ConfigError);
}
