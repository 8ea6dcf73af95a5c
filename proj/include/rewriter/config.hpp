#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/grpo.hpp"
#include "rewriter/pipeline.hpp"
#include "rewriter/reward.hpp"

namespace rewriter {

struct CorpusConfig {
  std::string input;
  std::string output;
  std::size_t max_tokens = 8192;
  std::optional<double> split_fraction;
};

struct Stage2Config {
  ConstructionMode mode = ConstructionMode::fallback;
  std::string prompt_path;        // empty = built-in rewriting prompt
  std::string judge_prompt_path;  // empty = built-in judge prompt
  double temperature = 0.0;
  double top_p = 1.0;
  int max_new_tokens = 8192;
  std::size_t attempts = 1;
  std::size_t concurrency = 1;
};

/// Fully resolved run configuration. One seed drives every random choice.
struct RunConfig {
  std::uint64_t seed = 0;
  CorpusConfig corpus;
  RewardConfig reward;
  Stage1Config stage1;
  Stage2Config stage2;
  GatewayConfig gateway;
  double instability_threshold = 50.0;

  /// Every key with its default value; the schema against which config
  /// files and dotted flags are checked.
  static nlohmann::json defaults_json();
  /// Strict conversion: unknown keys and mistyped values are ConfigErrors.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Overlays `overlay` onto `base`, rejecting keys absent from `base`
/// (except inside gateway.endpoints, whose keys are capability names).
void merge_config(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path = "");

/// Sets a dotted key ("reward.lambda_div") from its command-line text.
void set_dotted(nlohmann::json& config, std::string_view dotted_key, const std::string& text);

/// FNV-1a of the canonical dump, as 16 hex digits.
std::string config_hash(const nlohmann::json& resolved);

}  // namespace rewriter
