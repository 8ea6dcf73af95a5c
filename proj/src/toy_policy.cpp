#include "rewriter/toy_policy.hpp"

#include <algorithm>
#include <cmath>

#include "rewriter/error.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/random.hpp"

namespace rewriter {

using nlohmann::json;

ToyPolicy::ToyPolicy(std::vector<std::string> vocabulary, std::size_t context_order,
                     double temperature, std::size_t end_token)
    : vocabulary_(std::move(vocabulary)),
      context_order_(context_order),
      temperature_(temperature),
      end_token_(end_token) {
  const std::size_t V = vocabulary_.size();
  if (V < 2 || V > kMaxVocab) {
    throw ConfigError("toy policy vocabulary size must lie in [2, " + std::to_string(kMaxVocab) + "]");
  }
  if (end_token_ >= V) throw ConfigError("toy policy end token out of range");
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_)) {
    throw ConfigError("toy policy temperature must be positive");
  }
  for (std::size_t i = 0; i < V; ++i) {
    const auto& tok = vocabulary_[i];
    if (tok.empty() || std::any_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isspace(c); })) {
      throw ConfigError("toy policy tokens must be non-empty and contain no whitespace");
    }
    if (std::find(vocabulary_.begin(), vocabulary_.begin() + static_cast<std::ptrdiff_t>(i), tok) !=
        vocabulary_.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("toy policy vocabulary has duplicate token '" + tok + "'");
    }
  }
  num_contexts_ = 1;
  for (std::size_t i = 0; i < context_order_; ++i) {
    num_contexts_ *= V + 1;
    if (num_contexts_ * V > kMaxTableSize) throw ConfigError("toy policy table too large");
  }
  logits_.assign(num_contexts_ * V, 0.0);
}

ToyPolicy ToyPolicy::random(std::vector<std::string> vocabulary, std::size_t context_order,
                            double temperature, double init_scale, std::uint64_t seed) {
  ToyPolicy p(std::move(vocabulary), context_order, temperature);
  if (init_scale != 0.0) {
    Rng rng(seed);
    for (double& v : p.logits_) v = init_scale * rng.normal();
  }
  return p;
}

std::size_t ToyPolicy::context_index(std::span<const std::size_t> history) const {
  std::size_t index = 0;
  for (std::size_t i = 0; i < context_order_; ++i) {
    // Position i of the window, oldest first.
    const std::size_t back = context_order_ - i;
    const std::size_t id = history.size() >= back ? history[history.size() - back] : bos();
    index = index * (vocab_size() + 1) + id;
  }
  return index;
}

std::span<const double> ToyPolicy::logits(std::size_t context) const {
  return std::span<const double>(logits_).subspan(context * vocab_size(), vocab_size());
}

std::span<double> ToyPolicy::logits(std::size_t context) {
  return std::span<double>(logits_).subspan(context * vocab_size(), vocab_size());
}

std::vector<double> ToyPolicy::log_probabilities(std::size_t context) const {
  const auto row = logits(context);
  std::vector<double> out(row.size());
  double max_scaled = -INFINITY;
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = row[j] / temperature_;
    max_scaled = std::max(max_scaled, out[j]);
  }
  double sum = 0.0;
  for (double v : out) sum += std::exp(v - max_scaled);
  const double log_z = max_scaled + std::log(sum);
  for (double& v : out) v -= log_z;
  return out;
}

std::vector<double> ToyPolicy::probabilities(std::size_t context) const {
  auto out = log_probabilities(context);
  for (double& v : out) v = std::exp(v);
  return out;
}

std::optional<std::size_t> ToyPolicy::token_id(std::string_view token) const {
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    if (vocabulary_[i] == token) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> ToyPolicy::encode(std::string_view text) const {
  std::vector<std::size_t> out;
  for (auto tok : whitespace_tokens(text)) {
    std::string_view t = tok;
    if (t.starts_with("\\boxed{") && t.ends_with("}")) t = t.substr(7, t.size() - 8);
    if (auto id = token_id(t)) out.push_back(*id);
  }
  return out;
}

std::string ToyPolicy::render(std::span<const std::size_t> tokens) const {
  std::vector<std::size_t> visible;
  for (auto t : tokens) {
    if (t != end_token_) visible.push_back(t);
  }
  std::string out;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (i > 0) out += ' ';
    if (i + 1 == visible.size()) {
      out += "\\boxed{" + vocabulary_[visible[i]] + "}";
    } else {
      out += vocabulary_[visible[i]];
    }
  }
  return out;
}

json ToyPolicy::to_json() const {
  json rows = json::array();
  for (std::size_t c = 0; c < num_contexts_; ++c) {
    const auto row = logits(c);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"vocabulary", vocabulary_},
          {"context_order", context_order_},
          {"temperature", temperature_},
          {"end_token", end_token_},
          {"logits", std::move(rows)}};
}

ToyPolicy ToyPolicy::from_json(const json& j) {
  try {
    ToyPolicy p(j.at("vocabulary").get<std::vector<std::string>>(),
                j.at("context_order").get<std::size_t>(), j.at("temperature").get<double>(),
                j.at("end_token").get<std::size_t>());
    const auto& rows = j.at("logits");
    if (rows.size() != p.num_contexts()) throw ConfigError("toy policy: wrong number of logit rows");
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const auto row = rows[c].get<std::vector<double>>();
      if (row.size() != p.vocab_size()) throw ConfigError("toy policy: wrong logit row width");
      std::copy(row.begin(), row.end(), p.logits(c).begin());
    }
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("toy policy: ") + e.what());
  }
}

SampledSequence sample_sequence(const ToyPolicy& policy, std::span<const std::size_t> prompt,
                                std::size_t length_cap, Rng& rng) {
  SampledSequence seq;
  std::vector<std::size_t> history(prompt.begin(), prompt.end());
  while (seq.tokens.size() < length_cap) {
    const std::size_t ctx = policy.context_index(history);
    const auto logp = policy.log_probabilities(ctx);
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t chosen = logp.size() - 1;
    for (std::size_t j = 0; j < logp.size(); ++j) {
      cumulative += std::exp(logp[j]);
      if (u < cumulative) {
        chosen = j;
        break;
      }
    }
    seq.contexts.push_back(ctx);
    seq.tokens.push_back(chosen);
    seq.logprob += logp[chosen];
    history.push_back(chosen);
    if (chosen == policy.end_token()) {
      seq.terminated = true;
      break;
    }
  }
  return seq;
}

std::vector<double> token_logprobs(const ToyPolicy& policy, std::span<const std::size_t> prompt,
                                   std::span<const std::size_t> tokens) {
  std::vector<std::size_t> history(prompt.begin(), prompt.end());
  std::vector<double> out;
  out.reserve(tokens.size());
  for (auto t : tokens) {
    out.push_back(policy.log_probabilities(policy.context_index(history))[t]);
    history.push_back(t);
  }
  return out;
}

double sequence_logprob(const ToyPolicy& policy, std::span<const std::size_t> prompt,
                        std::span<const std::size_t> tokens) {
  double total = 0.0;
  for (double lp : token_logprobs(policy, prompt, tokens)) total += lp;
  return total;
}

}  // namespace rewriter
