#include "rewriter/grpo.hpp"

#include <cmath>

#include "rewriter/error.hpp"
#include "rewriter/random.hpp"
#include "rewriter/templates.hpp"
#include "rewriter/verifier.hpp"

namespace rewriter {

using nlohmann::json;

GroupAdvantage group_advantages(std::span<const double> rewards, double epsilon) {
  if (rewards.empty()) throw DomainError("group_advantages needs K >= 1");
  GroupAdvantage out;
  out.rewards.assign(rewards.begin(), rewards.end());
  const double n = static_cast<double>(rewards.size());
  for (double r : rewards) out.mean += r;
  out.mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - out.mean) * (r - out.mean);
  out.std = std::sqrt(var / n);
  out.advantages.assign(rewards.size(), 0.0);
  if (out.std > 0.0) {
    for (std::size_t k = 0; k < rewards.size(); ++k) {
      out.advantages[k] = (rewards[k] - out.mean) / (out.std + epsilon);
    }
  }
  return out;
}

double surrogate_objective(const ToyPolicy& policy, std::span<const TrainingGroup> batch) {
  double total = 0.0;
  for (const auto& group : batch) {
    for (std::size_t k = 0; k < group.candidates.size(); ++k) {
      const auto& seq = group.candidates[k];
      double lp = 0.0;
      for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
        lp += policy.log_probabilities(seq.contexts[t])[seq.tokens[t]];
      }
      total += group.advantages[k] * lp;
    }
  }
  return total;
}

std::vector<double> surrogate_gradient(const ToyPolicy& policy, std::span<const TrainingGroup> batch) {
  const std::size_t V = policy.vocab_size();
  const double inv_t = 1.0 / policy.temperature();
  std::vector<double> grad(policy.parameters().size(), 0.0);
  for (const auto& group : batch) {
    if (group.advantages.size() != group.candidates.size()) {
      throw DomainError("training group: advantages and candidates differ in length");
    }
    for (std::size_t k = 0; k < group.candidates.size(); ++k) {
      const double a = group.advantages[k];
      if (a == 0.0) continue;
      const auto& seq = group.candidates[k];
      for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
        const std::size_t ctx = seq.contexts[t];
        const auto probs = policy.probabilities(ctx);
        double* row = grad.data() + ctx * V;
        // d log softmax(l/T)_a / d l_j = (1[j = a] - p_j) / T
        for (std::size_t j = 0; j < V; ++j) row[j] -= a * probs[j] * inv_t;
        row[seq.tokens[t]] += a * inv_t;
      }
    }
  }
  return grad;
}

void policy_gradient_step(ToyPolicy& policy, std::span<const TrainingGroup> batch,
                          double learning_rate) {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
  const auto grad = surrogate_gradient(policy, batch);
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError("non-finite policy gradient; step rejected");
  }
  auto& params = policy.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grad[i] != 0.0 && learning_rate != 0.0) params[i] += learning_rate * grad[i];
  }
  for (double p : params) {
    if (!std::isfinite(p)) throw NumericError("policy logits became non-finite");
  }
}

std::vector<SampledSequence> sample_sequences(const ToyPolicy& policy,
                                              std::span<const std::size_t> prompt,
                                              std::size_t K, std::size_t length_cap,
                                              std::uint64_t seed) {
  if (K < 1) throw ConfigError("group size K must be >= 1");
  if (length_cap < 1) throw ConfigError("length cap must be >= 1");
  Rng rng(seed);
  std::vector<SampledSequence> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) out.push_back(sample_sequence(policy, prompt, length_cap, rng));
  return out;
}

std::vector<std::string> sample_group(const ToyPolicy& policy, const ExpertSample& sample,
                                      std::string_view prompt_template, std::size_t K,
                                      std::uint64_t seed, std::size_t length_cap) {
  const auto prompt = policy.encode(
      render_rewriting_prompt(prompt_template, sample.input_x, sample.expert_y));
  std::vector<std::string> texts;
  for (const auto& seq : sample_sequences(policy, prompt, K, length_cap, seed)) {
    texts.push_back(policy.render(seq.tokens));
  }
  return texts;
}

// --- synthetic task ---------------------------------------------------------

std::vector<std::string> synthetic_vocabulary(std::size_t vocab_size) {
  std::vector<std::string> vocab = {"<eos>", "0", "1", "2", "3", "4", "5", "6", "7",
                                    "8",     "9", "+", "-", "*", "=", "so"};
  if (vocab_size < vocab.size()) {
    throw ConfigError("synthetic task needs vocab_size >= " + std::to_string(vocab.size()));
  }
  if (vocab_size > ToyPolicy::kMaxVocab) {
    throw ConfigError("vocab_size exceeds " + std::to_string(ToyPolicy::kMaxVocab));
  }
  for (std::size_t i = vocab.size(); i < vocab_size; ++i) vocab.push_back("w" + std::to_string(i));
  return vocab;
}

std::vector<ExpertSample> make_synthetic_tasks(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ExpertSample> out;
  out.reserve(count);
  constexpr const char* kOps[] = {"+", "-", "*"};
  for (std::size_t i = 0; i < count; ++i) {
    const auto a = static_cast<int>(rng.below(10));
    const auto b = static_cast<int>(rng.below(10));
    const auto op = rng.below(3);
    int result = op == 0 ? a + b : op == 1 ? a - b : a * b;
    result = ((result % 10) + 10) % 10;
    ExpertSample s;
    s.id = "synthetic-" + std::to_string(i);
    s.input_x = std::to_string(a) + " " + kOps[op] + " " + std::to_string(b);
    s.expert_y = s.input_x + " = \\boxed{" + std::to_string(result) + "}";
    s.token_count = whitespace_token_count(s.input_x) + whitespace_token_count(s.expert_y);
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

std::array<EndpointPolicy, 5> in_process_policies() {
  std::array<EndpointPolicy, 5> p;
  p.fill(EndpointPolicy{RetryPolicy{1, 0.0, 1.0}, 1});
  return p;
}

}  // namespace

SyntheticTaskGateway::SyntheticTaskGateway(ToyPolicy reference)
    : Gateway({Capability::score, Capability::embed, Capability::judge, Capability::tokenize},
              in_process_policies()),
      reference_(std::move(reference)) {}

json SyntheticTaskGateway::describe() const {
  return {{"backend", "synthetic"},
          {"capabilities", {"score", "embed", "judge", "tokenize"}},
          {"vocab_size", reference_.vocab_size()},
          {"context_order", reference_.context_order()}};
}

std::vector<std::string> SyntheticTaskGateway::do_generate(const GenerationRequest&) {
  throw CapabilityError("synthetic task gateway cannot generate");
}

ScoreResult SyntheticTaskGateway::do_score(const ScoreRequest& request) {
  const auto context = reference_.encode(request.context);
  const auto completion = reference_.encode(request.completion);
  ScoreResult out;
  out.logprobs = token_logprobs(reference_, context, completion);
  out.token_count = out.logprobs.size();
  return out;
}

std::vector<double> SyntheticTaskGateway::do_embed(std::string_view text) {
  std::vector<double> counts(reference_.vocab_size(), 0.0);
  for (auto id : reference_.encode(text)) counts[id] += 1.0;
  return counts;
}

std::string SyntheticTaskGateway::do_judge(std::string_view) { return "VALID"; }

std::size_t SyntheticTaskGateway::do_tokenize(std::string_view text) {
  return whitespace_token_count(text);
}

// --- Stage I loop -----------------------------------------------------------

void Stage1Config::validate() const {
  reward.validate();
  if (batch_groups < 1) throw ConfigError("stage1.batch_groups must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("stage1.learning_rate must be finite and nonnegative");
  }
  if (length_cap < 1) throw ConfigError("stage1.length_cap must be >= 1");
  if (!(advantage_epsilon > 0.0)) throw ConfigError("advantage epsilon must be positive");
  if (num_tasks < 1) throw ConfigError("stage1.num_tasks must be >= 1");
}

json StepMetrics::to_json() const {
  return {{"step", step},
          {"mean_total", mean_total},
          {"tc_yield", tc_yield},
          {"mean_r_dist", mean_r_dist},
          {"mean_r_div", mean_r_div}};
}

Stage1Result train_stage1(ToyPolicy policy, std::span<const ExpertSample> samples,
                          const Stage1Config& config, Gateway& gateway,
                          const Stage1Observer& observer) {
  config.validate();
  if (samples.empty()) throw ConfigError("stage 1 needs at least one training sample");
  const std::string prompt_template = config.prompt.empty() ? std::string(kRewritingPrompt) : config.prompt;
  Verifier verifier(gateway, std::string(kJudgePrompt));
  const std::size_t K = config.reward.group_size;

  Stage1Result result{std::move(policy), {}};
  result.metrics.reserve(config.steps);

  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng picker(mix_seed(config.seed, 2 * step));
    std::vector<RewriteGroup> groups(config.batch_groups);
    std::vector<TrainingGroup> batch(config.batch_groups);

    for (std::size_t g = 0; g < config.batch_groups; ++g) {
      const auto& sample = samples[picker.below(samples.size())];
      const auto prompt = result.policy.encode(
          render_rewriting_prompt(prompt_template, sample.input_x, sample.expert_y));
      const auto seed = mix_seed(config.seed, 2 * step + 1) ^ mix_seed(g, 0x5eed);
      batch[g].candidates = sample_sequences(result.policy, prompt, K, config.length_cap, seed);

      auto& group = groups[g];
      group.sample_id = sample.id;
      group.input_x = sample.input_x;
      group.expert_y = sample.expert_y;
      for (const auto& seq : batch[g].candidates) group.candidates.push_back(result.policy.render(seq.tokens));
      group.reset_signals();
      for (std::size_t k = 0; k < K; ++k) {
        group.outcomes[k] = verifier.gate(sample.input_x, sample.expert_y, group.candidates[k]);
      }
      acquire_signals(group, gateway, config.reward.mode);
      assemble(group, config.reward);

      std::vector<double> totals;
      for (const auto& r : group.rewards) totals.push_back(r.total);
      batch[g].advantages = group_advantages(totals, config.advantage_epsilon).advantages;
    }

    StepMetrics m;
    m.step = step;
    std::size_t n = 0, feasible = 0, n_dist = 0, n_div = 0;
    for (const auto& group : groups) {
      for (const auto& r : group.rewards) {
        ++n;
        m.mean_total += r.total;
        feasible += static_cast<std::size_t>(r.r_task);
        if (r.r_dist) {
          m.mean_r_dist += *r.r_dist;
          ++n_dist;
        }
        if (r.r_div) {
          m.mean_r_div += *r.r_div;
          ++n_div;
        }
      }
    }
    m.mean_total /= static_cast<double>(n);
    m.tc_yield = static_cast<double>(feasible) / static_cast<double>(n);
    m.mean_r_dist = n_dist ? m.mean_r_dist / static_cast<double>(n_dist) : 0.0;
    m.mean_r_div = n_div ? m.mean_r_div / static_cast<double>(n_div) : 0.0;
    result.metrics.push_back(m);

    if (observer) observer(step, groups);
    policy_gradient_step(result.policy, batch, config.learning_rate);
  }
  return result;
}

}  // namespace rewriter
