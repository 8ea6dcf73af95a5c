#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rewriter/corpus.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/reward.hpp"
#include "rewriter/toy_policy.hpp"

namespace rewriter {

struct GroupAdvantage {
  std::string sample_id;
  std::vector<double> rewards;
  std::vector<double> advantages;
  double mean = 0.0;
  double std = 0.0;  // population
};

/// A_k = (r_k - mean) / (std + epsilon); all-equal groups get all zeros.
GroupAdvantage group_advantages(std::span<const double> rewards, double epsilon = 1e-8);

/// Sampled candidates of one group with their advantages. The sequences
/// carry the per-step contexts needed for the gradient.
struct TrainingGroup {
  std::vector<SampledSequence> candidates;
  std::vector<double> advantages;
};

/// sum_groups sum_k A_k * log pi(candidate_k), evaluated at `policy`.
double surrogate_objective(const ToyPolicy& policy, std::span<const TrainingGroup> batch);

/// Analytic gradient of the surrogate with respect to every logit.
std::vector<double> surrogate_gradient(const ToyPolicy& policy, std::span<const TrainingGroup> batch);

/// Gradient ascent on the surrogate. Throws NumericError (policy untouched)
/// when the gradient is not finite.
void policy_gradient_step(ToyPolicy& policy, std::span<const TrainingGroup> batch,
                          double learning_rate);

/// K sequences conditioned on the rendered prompt, deterministic in `seed`.
std::vector<SampledSequence> sample_sequences(const ToyPolicy& policy,
                                              std::span<const std::size_t> prompt,
                                              std::size_t K, std::size_t length_cap,
                                              std::uint64_t seed);

/// Surface texts of K candidates for `sample` under the rewriting prompt.
std::vector<std::string> sample_group(const ToyPolicy& policy, const ExpertSample& sample,
                                      std::string_view prompt_template, std::size_t K,
                                      std::uint64_t seed, std::size_t length_cap = 16);

// --- synthetic Stage I task -------------------------------------------------

/// "<eos>", digits, four operators, "so": 16 tokens.
std::vector<std::string> synthetic_vocabulary(std::size_t vocab_size = 16);

/// Problems "a op b" with expert solution "a op b = \boxed{answer}", where
/// the answer is the result modulo 10.
std::vector<ExpertSample> make_synthetic_tasks(std::size_t count, std::uint64_t seed);

/// In-process gateway for the synthetic task: scoring under a frozen
/// reference policy conditioned on x only, bag-of-token embeddings over the
/// vocabulary, a judge that accepts every answer-correct candidate, and
/// whitespace tokenization. No generate capability.
class SyntheticTaskGateway final : public Gateway {
 public:
  explicit SyntheticTaskGateway(ToyPolicy reference);

  nlohmann::json describe() const override;
  const ToyPolicy& reference() const { return reference_; }

 protected:
  std::vector<std::string> do_generate(const GenerationRequest& request) override;
  ScoreResult do_score(const ScoreRequest& request) override;
  std::vector<double> do_embed(std::string_view text) override;
  std::string do_judge(std::string_view prompt) override;
  std::size_t do_tokenize(std::string_view text) override;

 private:
  ToyPolicy reference_;
};

// --- Stage I loop -----------------------------------------------------------

struct Stage1Config {
  std::size_t steps = 200;
  std::size_t batch_groups = 32;
  double learning_rate = 0.05;
  std::uint64_t seed = 7;
  RewardConfig reward;
  double advantage_epsilon = 1e-8;
  std::size_t vocab_size = 16;
  std::size_t context_order = 1;
  std::size_t length_cap = 16;
  double temperature = 1.0;
  double init_scale = 0.5;
  std::size_t num_tasks = 200;
  std::string prompt;  // empty = built-in rewriting prompt

  void validate() const;
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_total = 0.0;
  double tc_yield = 0.0;
  double mean_r_dist = 0.0;  // over candidates that received r_dist
  double mean_r_div = 0.0;   // over candidates that received r_div

  nlohmann::json to_json() const;
  bool operator==(const StepMetrics&) const = default;
};

struct Stage1Result {
  ToyPolicy policy;
  std::vector<StepMetrics> metrics;
};

using Stage1Observer = std::function<void(std::size_t step, std::span<const RewriteGroup> groups)>;

/// sample -> verify -> score -> assemble -> advantage -> step, `steps` times.
Stage1Result train_stage1(ToyPolicy policy, std::span<const ExpertSample> samples,
                          const Stage1Config& config, Gateway& gateway,
                          const Stage1Observer& observer = {});

}  // namespace rewriter
