#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rewriter {

class Rng;

/// Tabular n-gram softmax policy over a small vocabulary.
///
/// The context of a step is the last `context_order` tokens of the history
/// (prompt tokens followed by generated ones), left-padded with a
/// beginning-of-sequence id equal to `vocab_size()`. Each context owns one
/// row of `vocab_size()` logits; probabilities are softmax(logits / T).
///
/// Surface form: a token sequence is written space-separated with its final
/// token wrapped as `\boxed{tok}`, so the rule-based answer check reads the
/// last token as the final answer. `encode` accepts that form back and skips
/// anything outside the vocabulary.
class ToyPolicy {
 public:
  static constexpr std::size_t kMaxVocab = 64;
  static constexpr std::size_t kMaxTableSize = std::size_t{1} << 22;

  ToyPolicy(std::vector<std::string> vocabulary, std::size_t context_order,
            double temperature = 1.0, std::size_t end_token = 0);

  /// Logits drawn i.i.d. from N(0, init_scale^2).
  static ToyPolicy random(std::vector<std::string> vocabulary, std::size_t context_order,
                          double temperature, double init_scale, std::uint64_t seed);

  std::size_t vocab_size() const { return vocabulary_.size(); }
  std::size_t context_order() const { return context_order_; }
  double temperature() const { return temperature_; }
  std::size_t end_token() const { return end_token_; }
  std::size_t bos() const { return vocabulary_.size(); }
  std::size_t num_contexts() const { return num_contexts_; }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

  std::size_t context_index(std::span<const std::size_t> history) const;

  std::span<const double> logits(std::size_t context) const;
  std::span<double> logits(std::size_t context);
  std::vector<double>& parameters() { return logits_; }
  const std::vector<double>& parameters() const { return logits_; }

  std::vector<double> probabilities(std::size_t context) const;
  std::vector<double> log_probabilities(std::size_t context) const;

  std::optional<std::size_t> token_id(std::string_view token) const;
  std::vector<std::size_t> encode(std::string_view text) const;
  /// Surface form of the tokens; the end token is dropped.
  std::string render(std::span<const std::size_t> tokens) const;

  nlohmann::json to_json() const;
  static ToyPolicy from_json(const nlohmann::json& j);

  bool operator==(const ToyPolicy&) const = default;

 private:
  std::vector<std::string> vocabulary_;
  std::size_t context_order_;
  double temperature_;
  std::size_t end_token_;
  std::size_t num_contexts_;
  std::vector<double> logits_;
};

struct SampledSequence {
  std::vector<std::size_t> tokens;    // emitted actions, end token included when sampled
  std::vector<std::size_t> contexts;  // context row used at each step
  double logprob = 0.0;               // sum of the log-probabilities used while sampling
  bool terminated = false;            // ended by the end token rather than the cap
};

SampledSequence sample_sequence(const ToyPolicy& policy, std::span<const std::size_t> prompt,
                                std::size_t length_cap, Rng& rng);

/// Log-probability of `tokens` following `prompt`, recomputed from scratch.
double sequence_logprob(const ToyPolicy& policy, std::span<const std::size_t> prompt,
                        std::span<const std::size_t> tokens);

/// Per-token log-probabilities of `tokens` following `prompt`.
std::vector<double> token_logprobs(const ToyPolicy& policy, std::span<const std::size_t> prompt,
                                   std::span<const std::size_t> tokens);

}  // namespace rewriter
