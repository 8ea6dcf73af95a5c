#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "rewriter/commands.hpp"
#include "rewriter/config.hpp"
#include "rewriter/error.hpp"
#include "rewriter/grpo.hpp"
#include "rewriter/random.hpp"
#include "support.hpp"

using namespace rewriter;
using nlohmann::json;
using testing_support::fixture;
using testing_support::read_jsonl;
using testing_support::ScratchDir;
using testing_support::slurp;
using testing_support::write_file;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string mock_url(const std::string& name) { return "mock:" + fixture(name).string(); }

void expect_error_line(const Run& r, const std::string& kind) {
  ASSERT_FALSE(r.err.empty());
  EXPECT_EQ(r.err.find('\n'), r.err.size() - 1);
  const auto j = json::parse(r.err);
  EXPECT_EQ(j["error"], kind);
  EXPECT_TRUE(j["message"].is_string());
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const auto j = RunConfig::defaults_json();
  EXPECT_EQ(RunConfig::from_json(j).to_json(), j);
  EXPECT_EQ(j["reward"]["K"], 10);
  EXPECT_EQ(j["stage2"]["temperature"], 0.0);
  EXPECT_EQ(j["stage2"]["max_new_tokens"], 8192);
  EXPECT_EQ(j["corpus"]["max_tokens"], 8192);
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(RunConfig::from_json({{"reward", {{"lambda_dvi", 1.0}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"extra", 1}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"gateway", {{"endpoints", {{"teleport", {{"url", "x"}}}}}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"gateway", {{"endpoints", {{"judge", {{"uri", "x"}}}}}}}}), ConfigError);
}

TEST(Config, TypeAndRangeChecks) {
  EXPECT_THROW(RunConfig::from_json({{"reward", {{"lambda_div", "big"}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"reward", {{"lambda_div", -0.5}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"reward", {{"gating_mode", "medium"}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"corpus", {{"split_fraction", 1.5}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"stage2", {{"top_p", 0}}}}), ConfigError);
  EXPECT_THROW(RunConfig::from_json({{"seed", -1}}), ConfigError);
}

TEST(Config, EndpointsParsed) {
  const auto c = RunConfig::from_json({{"gateway", {{"url", "http://a"}, {"endpoints", {{"judge", {{"url", "http://j"}}}}}}}});
  EXPECT_EQ(c.gateway.resolve(Capability::judge).url, "http://j");
  EXPECT_EQ(c.gateway.resolve(Capability::generate).url, "http://a");
  EXPECT_EQ(RunConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Config, DottedOverrides) {
  auto j = RunConfig::defaults_json();
  set_dotted(j, "reward.lambda_div", "0.25");
  set_dotted(j, "reward.gating_mode", "soft");
  set_dotted(j, "gateway.url", "mock:x.json");
  const auto c = RunConfig::from_json(j);
  EXPECT_EQ(c.reward.lambda_div, 0.25);
  EXPECT_EQ(c.reward.mode, GatingMode::soft_shaping);
  EXPECT_EQ(c.gateway.url, "mock:x.json");
  EXPECT_THROW(set_dotted(j, "reward.nope", "1"), ConfigError);
}

TEST(Config, HashTracksContent) {
  auto a = RunConfig::defaults_json();
  auto b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b["seed"] = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Cli, UsageErrors) {
  const auto none = cli({});
  EXPECT_EQ(none.code, 1);
  expect_error_line(none, "usage");
  const auto bad = cli({"verify", "--bogus"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(CliVerify, CaseStudyFixture) {
  const auto r = cli({"verify", "--gateway", mock_url("judge_valid.json"), "--input", fixture("base8_case.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int outcomes = 0;
  while (std::getline(lines, line)) {
    const auto j = json::parse(line);
    if (j.contains("summary")) {
      EXPECT_EQ(j["summary"]["passed"], 3);
      EXPECT_EQ(j["summary"]["judge_calls"], 3);
      continue;
    }
    ++outcomes;
    EXPECT_EQ(j["extracted_answer"], "777_8");
    EXPECT_EQ(j["v_ans"], 1);
  }
  EXPECT_EQ(outcomes, 3);
}

TEST(CliVerify, EmptyInput) {
  ScratchDir dir("cli");
  write_file(dir / "empty.jsonl", "");
  const auto r = cli({"verify", "--gateway", mock_url("judge_valid.json"), "--input", (dir / "empty.jsonl").string(),
                      "--output", (dir / "out.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "out.jsonl"), "");
  const auto summary = json::parse(r.out)["summary"];
  EXPECT_EQ(summary["total"], 0);
  EXPECT_EQ(summary["passed"], 0);
  EXPECT_TRUE(std::filesystem::exists(dir / "out.jsonl.manifest.json"));
}

TEST(CliVerify, MissingJudgeCapability) {
  const auto r = cli({"verify", "--gateway", mock_url("no_judge.json"), "--input", fixture("base8_case.jsonl").string()});
  EXPECT_EQ(r.code, 1);
  expect_error_line(r, "capability");
}

TEST(CliVerify, IoErrorExitCode) {
  const auto r = cli({"verify", "--gateway", mock_url("judge_valid.json"), "--input", "/nonexistent/in.jsonl"});
  EXPECT_EQ(r.code, 2);
  expect_error_line(r, "io");
}

TEST(CliScore, FixtureGroups) {
  const auto r = cli({"score", "--input", fixture("score_groups.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  for (const auto& c : json::parse(line)["candidates"]) EXPECT_EQ(c["total"], 0.0);
  std::getline(lines, line);
  const auto feasible = json::parse(line)["candidates"];
  EXPECT_NEAR(feasible[0]["r_dist"].get<double>(), 0.7729, 5e-5);
  EXPECT_NEAR(feasible[1]["r_dist"].get<double>(), 0.5, 1e-12);
  EXPECT_NEAR(feasible[2]["r_dist"].get<double>(), 0.2271, 5e-5);
  EXPECT_EQ(cli({"score", "--input", fixture("score_groups.jsonl").string()}).out, r.out);
}

TEST(CliScore, SoftModeIsUngatedSum) {
  const auto r = cli({"score", "--input", fixture("score_groups.jsonl").string(), "--reward.gating_mode", "soft",
                      "--reward.lambda_dist", "0.5", "--reward.lambda_div", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto first = json::parse(r.out.substr(0, r.out.find('\n')));
  for (const auto& c : first["candidates"]) {
    EXPECT_NEAR(c["total"].get<double>(), 0.5 * c["r_dist"].get<double>() + 2 * c["r_div"].get<double>(), 1e-12);
  }
}

TEST(CliScore, VerifiesAgainstReferenceAndScoresWithGateway) {
  ScratchDir dir("cli");
  write_file(dir / "fx.json", R"({"judge":{"default":"VALID"},"score":{"uniform_vocab_size":3},"embed":{"dimension":6}})");
  write_file(dir / "g.jsonl",
             R"({"sample_id":"s","input":"q","reference":"\\boxed{4}","candidates":["a \\boxed{4}","b c \\boxed{5}","\\boxed{4} d e"]})"
             "\n");
  const auto r = cli({"score", "--gateway", "mock:" + (dir / "fx.json").string(), "--input", (dir / "g.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto c = json::parse(r.out)["candidates"];
  EXPECT_EQ(c[0]["r_task"], 1);
  EXPECT_EQ(c[1]["r_task"], 0);
  EXPECT_EQ(c[1]["total"], 0.0);
  EXPECT_NEAR(c[0]["nll"].get<double>(), std::log(3.0), 1e-12);
}

TEST(CliScore, NeedsGatewayWhenSignalsMissing) {
  ScratchDir dir("cli");
  write_file(dir / "g.jsonl", R"({"input":"q","candidates":[{"text":"a","r_task":1}]})" "\n");
  const auto r = cli({"score", "--input", (dir / "g.jsonl").string()});
  EXPECT_EQ(r.code, 1);
  expect_error_line(r, "capability");
}

TEST(CliTrain, ZeroStepsEmitsInitialPolicy) {
  ScratchDir dir("cli");
  const auto out = (dir / "policy.json").string();
  const auto r = cli({"train-agent", "--stage1.steps", "0", "--seed", "3", "--output", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto policy = ToyPolicy::from_json(json::parse(slurp(out)));
  const auto initial = ToyPolicy::random(synthetic_vocabulary(16), 1, 1.0, 0.5, mix_seed(3, 1));
  EXPECT_EQ(policy, initial);
  EXPECT_EQ(slurp(out + ".metrics.jsonl"), "");
}

TEST(CliTrain, InvalidLambda) {
  ScratchDir dir("cli");
  const auto r = cli({"train-agent", "--reward.lambda_dist", "-1", "--output", (dir / "p.json").string()});
  EXPECT_EQ(r.code, 1);
  expect_error_line(r, "config");
}

TEST(CliTrain, ShortRunIsReproducible) {
  ScratchDir dir("cli");
  const std::vector<std::string> args = {"train-agent", "--stage1.steps", "5", "--seed", "9", "--output"};
  auto a = args, b = args;
  a.push_back((dir / "a.json").string());
  b.push_back((dir / "b.json").string());
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(slurp(dir / "a.json.metrics.jsonl"), slurp(dir / "b.json.metrics.jsonl"));
  EXPECT_EQ(read_jsonl(dir / "a.json.metrics.jsonl").size(), 5u);
}

TEST(CliBuild, FallbackAndSuccessOnly) {
  ScratchDir dir("cli");
  const std::vector<std::string> base = {"build-dataset", "--gateway", mock_url("stage2_mock.json"), "--input",
                                         fixture("stage2_samples.jsonl").string()};
  auto a = base;
  a.insert(a.end(), {"--output", (dir / "fb.jsonl").string()});
  const auto ra = cli(a);
  ASSERT_EQ(ra.code, 0) << ra.err;
  EXPECT_EQ(read_jsonl(dir / "fb.jsonl").size(), 4u);
  const auto manifest = json::parse(slurp(dir / "fb.jsonl.manifest.json"));
  EXPECT_EQ(manifest["report"]["tc_yield"], 0.75);
  EXPECT_EQ(manifest["config_hash"], config_hash(manifest["config"]));
  EXPECT_EQ(manifest["gateway"]["backend"], "mock");

  auto s = base;
  s.insert(s.end(), {"--output", (dir / "so.jsonl").string(), "--stage2.mode", "success_only"});
  ASSERT_EQ(cli(s).code, 0);
  EXPECT_EQ(read_jsonl(dir / "so.jsonl").size(), 3u);

  // Rerun from the manifest's resolved config.
  write_file(dir / "resolved.json", manifest["config"].dump());
  ASSERT_EQ(cli({"build-dataset", "--config", (dir / "resolved.json").string(), "--output", (dir / "again.jsonl").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "again.jsonl"), slurp(dir / "fb.jsonl"));

  const auto stats = cli({"stats", (dir / "fb.jsonl.manifest.json").string(), (dir / "so.jsonl.manifest.json").string()});
  ASSERT_EQ(stats.code, 0) << stats.err;
  EXPECT_EQ(json::parse(stats.out)["total"], 8);
  EXPECT_EQ(json::parse(stats.out)["tc_yield"], 0.75);
}

TEST(CliBuild, SplitWritesHeldout) {
  ScratchDir dir("cli");
  const auto r = cli({"build-dataset", "--gateway", mock_url("stage2_mock.json"), "--input",
                      fixture("stage2_samples.jsonl").string(), "--output", (dir / "d.jsonl").string(),
                      "--split-fraction", "0.5", "--seed", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_jsonl(dir / "d.jsonl").size(), 2u);
  EXPECT_EQ(read_jsonl(dir / "d.jsonl.heldout.jsonl").size(), 2u);
}

TEST(CliBuild, ConfigFilePrecedence) {
  ScratchDir dir("cli");
  write_file(dir / "c.json", json{{"stage2", {{"mode", "success_only"}}}, {"seed", 5}}.dump());
  const std::vector<std::string> base = {"build-dataset", "--config", (dir / "c.json").string(), "--gateway",
                                         mock_url("stage2_mock.json"), "--input", fixture("stage2_samples.jsonl").string()};
  auto a = base;
  a.insert(a.end(), {"--output", (dir / "a.jsonl").string()});
  ASSERT_EQ(cli(a).code, 0);
  EXPECT_EQ(read_jsonl(dir / "a.jsonl").size(), 3u);
  auto b = base;
  b.insert(b.end(), {"--output", (dir / "b.jsonl").string(), "--stage2.mode", "fallback"});
  ASSERT_EQ(cli(b).code, 0);
  EXPECT_EQ(read_jsonl(dir / "b.jsonl").size(), 4u);
  const auto m = json::parse(slurp(dir / "b.jsonl.manifest.json"));
  EXPECT_EQ(m["seed"], 5);
  EXPECT_EQ(m["config"]["stage2"]["mode"], "fallback");
}

TEST(CliBuild, UnknownConfigKey) {
  ScratchDir dir("cli");
  write_file(dir / "c.json", R"({"stage2":{"modee":"fallback"}})");
  const auto r = cli({"build-dataset", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, 1);
  expect_error_line(r, "config");
}

TEST(CliBuild, BackendExhaustionExitCode) {
  ScratchDir dir("cli");
  write_file(dir / "fx.json", R"({"generate":{"default":"x"},"judge":{},"failures":{"tokenize":-1}})");
  const auto r = cli({"build-dataset", "--gateway", "mock:" + (dir / "fx.json").string(), "--gateway.backoff_s", "0",
                      "--input", fixture("stage2_samples.jsonl").string(), "--output", (dir / "d.jsonl").string()});
  EXPECT_EQ(r.code, 3);
  expect_error_line(r, "backend");
}

TEST(CliInstability, UniformFixture) {
  ScratchDir dir("cli");
  const auto out = (dir / "inst.json").string();
  const auto r = cli({"instability-report", "--gateway", mock_url("uniform_v2.json"), "--input",
                      fixture("instability_samples.jsonl").string(), "--output", out});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(out));
  EXPECT_NEAR(j["samples"][0]["implied_weight_log"].get<double>(), 4 * std::log(2.0), 1e-12);
  EXPECT_EQ(j["summary"]["count"], 2);
}

TEST(Templates, AssetsMatchBuiltIns) {
  const auto assets = std::filesystem::path(REWRITER_FIXTURE_DIR) / ".." / ".." / "assets" / "prompts";
  EXPECT_EQ(slurp(assets / "rewriting_prompt.txt"), kRewritingPrompt);
  EXPECT_EQ(slurp(assets / "judge_prompt.txt"), kJudgePrompt);
}
