#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rewriter/gateway.hpp"

namespace rewriter {

/// Tables that fully determine the mock backend's replies.
///
/// Fixture file layout (every section optional):
///
///   {
///     "capabilities": ["generate", "score", "embed", "judge", "tokenize"],
///     "generate": {"default": "...",
///                  "rules": [{"contains": "...", "completions": ["...", ...]}]},
///     "judge":    {"default": "VALID", "rules": [{"contains": "...", "reply": "..."}]},
///     "score":    {"uniform_vocab_size": 2,
///                  "entries": [{"context": "...", "completion": "...", "logprobs": [...]}],
///                  "token_logprobs": {"tok": -0.1}, "default_logprob": -2.0},
///     "embed":    {"dimension": 16, "vocabulary": ["a", "b"]},
///     "failures": {"judge": -1}
///   }
///
/// When "capabilities" is absent the mock offers tokenize plus every
/// capability whose section is present. Rules match by substring on the
/// prompt, first match wins. Greedy generation (temperature 0) returns the
/// first completion of the matching rule; sampled generation picks among the
/// completions with a hash of (prompt, seed, index). A failure count of -1
/// makes every dispatch of that capability fail; N > 0 fails the first N.
struct MockFixture {
  struct GenerateRule {
    std::string contains;
    std::vector<std::string> completions;
  };
  struct JudgeRule {
    std::string contains;
    std::string reply;
  };
  struct ScoreEntry {
    std::string context;
    std::string completion;
    std::vector<double> logprobs;
  };

  CapabilitySet capabilities = CapabilitySet::all();

  std::optional<std::string> generate_default;
  std::vector<GenerateRule> generate_rules;

  std::string judge_default = "VALID";
  std::vector<JudgeRule> judge_rules;

  std::optional<std::size_t> uniform_vocab_size;
  std::vector<ScoreEntry> score_entries;
  std::map<std::string, double> token_logprobs;
  double default_logprob = -2.0;

  std::size_t embed_dimension = 16;
  std::vector<std::string> embed_vocabulary;

  std::map<Capability, int> failures;

  static MockFixture from_json(const nlohmann::json& j);
  static MockFixture load(const std::filesystem::path& path);
};

class MockGateway final : public Gateway {
 public:
  explicit MockGateway(MockFixture fixture, RetryPolicy retry = {1, 0.0, 1.0},
                       std::size_t concurrency = 4);

  nlohmann::json describe() const override;
  const MockFixture& fixture() const { return fixture_; }

 protected:
  std::vector<std::string> do_generate(const GenerationRequest& request) override;
  ScoreResult do_score(const ScoreRequest& request) override;
  std::vector<double> do_embed(std::string_view text) override;
  std::string do_judge(std::string_view prompt) override;
  std::size_t do_tokenize(std::string_view text) override;

 private:
  void maybe_fail(Capability c);

  MockFixture fixture_;
  std::mutex failure_mutex_;
  std::map<Capability, int> failures_seen_;
};

/// 64-bit FNV-1a; stable across platforms, used wherever the repo needs a
/// reproducible hash (mock sampling, embedding buckets, config hashes).
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace rewriter
