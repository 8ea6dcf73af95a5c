#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rewriter/verifier.hpp"

namespace rewriter {

class Gateway;

using Embedding = std::vector<double>;

enum class GatingMode { hard_gate, soft_shaping };

std::string_view to_string(GatingMode mode);
GatingMode parse_gating_mode(std::string_view name);  // "hard" | "soft"

struct RewardConfig {
  double lambda_dist = 1.0;
  double lambda_div = 1.0;
  double epsilon = 1e-8;
  GatingMode mode = GatingMode::hard_gate;
  std::size_t group_size = 10;

  void validate() const;
};

struct RewardBreakdown {
  int r_task = 0;
  std::optional<double> r_dist;
  std::optional<double> r_div;
  double total = 0.0;
  GatingMode mode = GatingMode::hard_gate;
  double lambda_dist = 1.0;
  double lambda_div = 1.0;
};

/// The K candidate rewrites for one sample and everything computed on them.
///
/// Per-candidate vectors are index-aligned with `candidates`. `unscorable`
/// marks candidates whose log-probs or embedding could not be obtained;
/// they keep r_task but take no part in the auxiliary rewards.
struct RewriteGroup {
  std::string sample_id;
  std::string input_x;
  std::string expert_y;
  std::vector<std::string> candidates;
  std::vector<VerificationOutcome> outcomes;
  std::vector<std::optional<double>> nll;
  std::vector<std::optional<Embedding>> embeddings;
  std::vector<bool> unscorable;
  std::vector<std::optional<double>> z_hat;
  std::vector<RewardBreakdown> rewards;

  std::size_t size() const { return candidates.size(); }
  /// Sizes every per-candidate vector to the number of candidates.
  void reset_signals();
};

/// -(1/|y|) * sum_t log pi0(y_t | x, y_<t), scored under the QA condition.
double nll_per_token(std::string_view x, std::string_view y_tilde, Gateway& gateway);

/// (l_k - mean) / (population std + epsilon). Requires at least one value.
std::vector<double> normalize_group(std::span<const double> nlls, double epsilon);

/// 1 / (1 + exp(z)), evaluated without overflow.
double dist_reward(double z_hat);

/// (1 - cos) / 2 clamped to [0, 1]. Inputs must be unit-norm within 1e-6.
double pairwise_distance(std::span<const double> a, std::span<const double> b);

/// Mean pairwise distance over all unordered pairs; needs m >= 2.
double set_diversity(std::span<const Embedding> embeddings);

/// Clipped marginal contribution of each member to the set diversity.
/// Members are the entries holding an embedding; everyone else gets 0, and
/// with fewer than two members every entry is 0.
std::vector<double> div_rewards(std::span<const std::optional<Embedding>> embeddings);

/// Fills `nll` and `embeddings` for the candidates the mode needs (feasible
/// ones for hard gating, all for soft shaping). Backend or protocol failures
/// mark the candidate unscorable; capability errors propagate.
void acquire_signals(RewriteGroup& group, Gateway& gateway, GatingMode mode);

/// Computes z_hat and rewards for every candidate and stores them in the
/// group. Throws AssemblyError when a participating candidate lacks a
/// required component.
const std::vector<RewardBreakdown>& assemble(RewriteGroup& group, const RewardConfig& config);

/// Audit record: {sample_id, mode, candidates: [{r_task, nll, z_hat, r_dist, r_div, total}]}.
nlohmann::json score_report(const RewriteGroup& group);

}  // namespace rewriter
