#include "rewriter/reward.hpp"

#include <algorithm>
#include <cmath>

#include "rewriter/error.hpp"
#include "rewriter/gateway.hpp"

namespace rewriter {

using nlohmann::json;

namespace {

constexpr double kUnitTolerance = 1e-6;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_unit(std::span<const double> v) {
  const double norm = std::sqrt(dot(v, v));
  if (norm == 0.0) throw DomainError("zero-norm embedding");
  if (std::abs(norm - 1.0) > kUnitTolerance) {
    throw DomainError("embedding is not unit-norm (norm " + std::to_string(norm) + ")");
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string_view to_string(GatingMode mode) {
  return mode == GatingMode::hard_gate ? "hard" : "soft";
}

GatingMode parse_gating_mode(std::string_view name) {
  if (name == "hard") return GatingMode::hard_gate;
  if (name == "soft") return GatingMode::soft_shaping;
  throw ConfigError("gating_mode must be 'hard' or 'soft', got '" + std::string(name) + "'");
}

void RewardConfig::validate() const {
  if (!(lambda_dist >= 0.0) || !std::isfinite(lambda_dist)) {
    throw ConfigError("lambda_dist must be a finite nonnegative number");
  }
  if (!(lambda_div >= 0.0) || !std::isfinite(lambda_div)) {
    throw ConfigError("lambda_div must be a finite nonnegative number");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (group_size < 1) throw ConfigError("group size K must be >= 1");
}

void RewriteGroup::reset_signals() {
  const auto k = candidates.size();
  outcomes.resize(k);
  nll.assign(k, std::nullopt);
  embeddings.assign(k, std::nullopt);
  unscorable.assign(k, false);
  z_hat.assign(k, std::nullopt);
  rewards.assign(k, RewardBreakdown{});
}

double nll_per_token(std::string_view x, std::string_view y_tilde, Gateway& gateway) {
  const auto scored = gateway.score(ScoreRequest{std::string(x), std::string(y_tilde)});
  return -scored.sequence_logprob() / static_cast<double>(scored.token_count);
}

std::vector<double> normalize_group(std::span<const double> nlls, double epsilon) {
  if (nlls.empty()) throw DomainError("normalize_group needs at least one value");
  const double n = static_cast<double>(nlls.size());
  double mean = 0.0;
  for (double v : nlls) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : nlls) var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / n);
  std::vector<double> z;
  z.reserve(nlls.size());
  for (double v : nlls) z.push_back((v - mean) / (sigma + epsilon));
  return z;
}

double dist_reward(double z_hat) {
  if (z_hat >= 0.0) {
    const double e = std::exp(-z_hat);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z_hat));
}

double pairwise_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("embedding dimensions differ");
  require_unit(a);
  require_unit(b);
  if (std::equal(a.begin(), a.end(), b.begin())) return 0.0;
  const double cosine = std::clamp(dot(a, b), -1.0, 1.0);
  return std::clamp((1.0 - cosine) / 2.0, 0.0, 1.0);
}

double set_diversity(std::span<const Embedding> embeddings) {
  const std::size_t m = embeddings.size();
  if (m < 2) throw DomainError("set diversity needs at least two embeddings");
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) sum += pairwise_distance(embeddings[i], embeddings[j]);
  }
  return sum / (static_cast<double>(m) * static_cast<double>(m - 1) / 2.0);
}

std::vector<double> div_rewards(std::span<const std::optional<Embedding>> embeddings) {
  std::vector<double> out(embeddings.size(), 0.0);
  std::vector<std::size_t> members;
  for (std::size_t k = 0; k < embeddings.size(); ++k) {
    if (embeddings[k]) members.push_back(k);
  }
  const std::size_t m = members.size();
  if (m < 2) return out;

  // Row sums of the pairwise distance matrix give every leave-one-out mean in O(m^2).
  std::vector<double> row(m, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double d = pairwise_distance(*embeddings[members[i]], *embeddings[members[j]]);
      row[i] += d;
      row[j] += d;
      total += d;
    }
  }
  const double pairs = static_cast<double>(m) * static_cast<double>(m - 1) / 2.0;
  const double diversity = total / pairs;
  const double pairs_without = static_cast<double>(m - 1) * static_cast<double>(m - 2) / 2.0;
  for (std::size_t i = 0; i < m; ++i) {
    // D of a singleton is 0.
    const double without = pairs_without > 0.0 ? (total - row[i]) / pairs_without : 0.0;
    // Gains within rounding noise of zero count as zero.
    const double gain = diversity - without;
    out[members[i]] = gain > 1e-12 ? gain : 0.0;
  }
  return out;
}

void acquire_signals(RewriteGroup& group, Gateway& gateway, GatingMode mode) {
  if (group.outcomes.size() != group.size()) {
    throw AssemblyError("group '" + group.sample_id + "': outcomes missing before signal acquisition");
  }
  group.nll.resize(group.size());
  group.embeddings.resize(group.size());
  group.unscorable.resize(group.size(), false);
  for (std::size_t k = 0; k < group.size(); ++k) {
    const bool needed = mode == GatingMode::soft_shaping || group.outcomes[k].r_task == 1;
    if (!needed || group.unscorable[k]) continue;
    try {
      if (!group.nll[k]) group.nll[k] = nll_per_token(group.input_x, group.candidates[k], gateway);
      if (!group.embeddings[k]) group.embeddings[k] = gateway.embed(group.candidates[k]);
    } catch (const BackendError&) {
      group.unscorable[k] = true;
    } catch (const ProtocolError&) {
      group.unscorable[k] = true;
    }
  }
}

const std::vector<RewardBreakdown>& assemble(RewriteGroup& group, const RewardConfig& config) {
  const std::size_t K = group.size();
  const std::string where = "group '" + group.sample_id + "'";
  if (group.outcomes.size() != K) throw AssemblyError(where + ": outcomes missing");
  group.nll.resize(K);
  group.embeddings.resize(K);
  group.unscorable.resize(K, false);

  const bool hard = config.mode == GatingMode::hard_gate;
  std::vector<std::size_t> participants;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& o = group.outcomes[k];
    if (o.r_task != 0 && o.r_task != 1) {
      throw AssemblyError(where + ", candidate " + std::to_string(k) + ": r_task is not binary");
    }
    if (group.unscorable[k] || (hard && o.r_task == 0)) continue;
    if (!group.nll[k]) {
      throw AssemblyError(where + ", candidate " + std::to_string(k) + ": missing nll");
    }
    if (!group.embeddings[k]) {
      throw AssemblyError(where + ", candidate " + std::to_string(k) + ": missing embedding");
    }
    participants.push_back(k);
  }

  std::vector<double> nlls;
  std::vector<std::optional<Embedding>> member_embeddings(K);
  for (auto k : participants) {
    nlls.push_back(*group.nll[k]);
    member_embeddings[k] = group.embeddings[k];
  }
  const auto divs = div_rewards(member_embeddings);

  group.z_hat.assign(K, std::nullopt);
  group.rewards.assign(K, RewardBreakdown{});
  if (!nlls.empty()) {
    const auto z = normalize_group(nlls, config.epsilon);
    for (std::size_t i = 0; i < participants.size(); ++i) group.z_hat[participants[i]] = z[i];
  }

  for (std::size_t k = 0; k < K; ++k) {
    auto& r = group.rewards[k];
    r.r_task = group.outcomes[k].r_task;
    r.mode = config.mode;
    r.lambda_dist = config.lambda_dist;
    r.lambda_div = config.lambda_div;
    const bool participates = group.z_hat[k].has_value();
    if (participates) {
      r.r_dist = dist_reward(*group.z_hat[k]);
      r.r_div = divs[k];
    }
    const double aux = participates ? config.lambda_dist * *r.r_dist + config.lambda_div * *r.r_div : 0.0;
    r.total = hard ? r.r_task + r.r_task * aux : r.r_task + aux;
  }
  return group.rewards;
}

json score_report(const RewriteGroup& group) {
  json candidates = json::array();
  for (std::size_t k = 0; k < group.size(); ++k) {
    json c = {{"index", k}};
    c["r_task"] = k < group.outcomes.size() ? group.outcomes[k].r_task : 0;
    c["nll"] = k < group.nll.size() ? optional_number(group.nll[k]) : json(nullptr);
    c["z_hat"] = k < group.z_hat.size() ? optional_number(group.z_hat[k]) : json(nullptr);
    if (k < group.rewards.size()) {
      const auto& r = group.rewards[k];
      c["r_dist"] = optional_number(r.r_dist);
      c["r_div"] = optional_number(r.r_div);
      c["total"] = r.total;
    }
    if (k < group.unscorable.size() && group.unscorable[k]) c["unscorable"] = true;
    candidates.push_back(std::move(c));
  }
  json out = {{"sample_id", group.sample_id}, {"candidates", std::move(candidates)}};
  if (!group.rewards.empty()) {
    out["mode"] = to_string(group.rewards.front().mode);
    out["lambda_dist"] = group.rewards.front().lambda_dist;
    out["lambda_div"] = group.rewards.front().lambda_div;
  }
  return out;
}

}  // namespace rewriter
