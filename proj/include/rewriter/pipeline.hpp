#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rewriter/corpus.hpp"
#include "rewriter/verifier.hpp"

namespace rewriter {

class Gateway;

enum class ConstructionMode { fallback, success_only };

std::string_view to_string(ConstructionMode mode);
ConstructionMode parse_construction_mode(std::string_view name);

struct ConstructionReport {
  std::size_t total = 0;
  std::size_t rewrites_adopted = 0;
  std::size_t fallbacks = 0;
  double tc_yield = 0.0;  // rewrites_adopted / total, 0 when total = 0
  std::size_t answer_mismatch = 0;
  std::size_t judge_invalid = 0;
  std::size_t extraction_failure = 0;
  std::size_t backend_failure = 0;

  void recompute_yield();
  nlohmann::json to_json() const;
  static ConstructionReport from_json(const nlohmann::json& j);
  bool operator==(const ConstructionReport&) const = default;
};

struct BuildOptions {
  ConstructionMode mode = ConstructionMode::fallback;
  std::string prompt_template;  // must contain {question} and {original_solution}
  std::string judge_template;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  double top_p = 1.0;
  int max_new_tokens = 8192;
  std::size_t attempts = 1;
  std::size_t concurrency = 1;
};

/// What happened to one input sample.
struct SampleTrace {
  std::string sample_id;
  std::vector<std::string> rewrites;              // one per attempt that produced text
  std::vector<VerificationOutcome> outcomes;      // index-aligned with rewrites
  std::optional<std::size_t> adopted;             // attempt index of the adopted rewrite
  FailureCause cause = FailureCause::none;        // final cause when nothing was adopted
};

struct BuildResult {
  std::vector<RewrittenRecord> records;  // input order
  ConstructionReport report;
  std::vector<SampleTrace> traces;       // input order
};

/// Generate-Verify-Fallback: one rewrite per sample (more when
/// `attempts` > 1), gated by the verifier; failures fall back to the expert
/// demonstration or are dropped in success-only mode. Samples run
/// concurrently up to `concurrency`; output order is input order.
BuildResult build_dataset(std::span<const ExpertSample> samples, Gateway& gateway,
                          const BuildOptions& options);

/// Counter-wise sum of shard reports; the yield is recomputed from the sums.
ConstructionReport yield_stats(std::span<const ConstructionReport> shards);

struct InstabilityEntry {
  std::string id;
  std::size_t token_count = 0;
  double nll_per_token = 0.0;
  double sequence_logprob = 0.0;
  double implied_weight_log = 0.0;  // log(1 / pi0(y* | x)) = -sequence_logprob
};

struct InstabilityReport {
  std::vector<InstabilityEntry> entries;
  std::size_t skipped = 0;
  double threshold = 0.0;
  double min_log_weight = 0.0;
  double median_log_weight = 0.0;
  double max_log_weight = 0.0;
  double fraction_above_threshold = 0.0;

  nlohmann::json to_json() const;
};

/// Scores every expert demonstration under the QA condition and reports the
/// implied inverse-probability weight in log form.
InstabilityReport instability_report(std::span<const ExpertSample> samples, Gateway& gateway,
                                     double log_weight_threshold = 50.0);

}  // namespace rewriter
