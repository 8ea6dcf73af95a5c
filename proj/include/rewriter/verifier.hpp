#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace rewriter {

class Gateway;

/// Content of the last `\boxed{...}` in `solution`, normalized: outer math
/// delimiters stripped, whitespace trimmed and collapsed, `\text{...}`
/// wrappers dropped (content kept). nullopt when no boxed construct parses
/// (including unbalanced braces inside it).
std::optional<std::string> extract_answer(std::string_view solution);

/// Normalization applied to boxed content; exposed for tests.
std::string normalize_answer(std::string_view raw);

enum class AnswerCheck { match, mismatch, extraction_failure };

/// Equality after normalization, or exact rational equality when both sides
/// parse as numbers (integers, decimals, a/b, \frac{a}{b}).
AnswerCheck compare_answers(std::string_view candidate, std::string_view reference);

/// 1 iff both extractions succeed and the answers agree.
int check_answer(std::string_view candidate, std::string_view reference);

enum class Verdict { valid, invalid, unparseable };

/// Protocol: the reply, trimmed, with one trailing period removed and
/// compared case-insensitively, must be exactly VALID or INVALID.
Verdict parse_verdict(std::string_view reply);

enum class FailureCause { none, extraction_failure, answer_mismatch, judge_invalid, backend_failure };

std::string_view to_string(FailureCause cause);

struct VerificationOutcome {
  int v_ans = 0;
  std::optional<int> v_rea;  // nullopt = skipped (judge not consulted)
  int r_task = 0;
  std::optional<std::string> extracted_answer;
  std::optional<std::string> judge_raw;
  FailureCause cause = FailureCause::none;

  /// Holds the gate laws: r_task = v_ans * v_rea and skipped iff v_ans = 0.
  bool consistent() const;
  nlohmann::json to_json() const;
};

struct VerifierCounters {
  std::size_t judge_calls = 0;
  std::size_t unparseable_verdicts = 0;
  std::size_t judge_backend_failures = 0;
};

/// Coarse-to-fine task-consistency gate: a rule-based final-answer check,
/// then (only on answer-correct candidates) an LLM judge. Safe to call
/// concurrently; counters are atomic.
class Verifier {
 public:
  Verifier(Gateway& gateway, std::string judge_template);

  /// Judge verdict mapped to {0,1}; unparseable replies and exhausted
  /// retries both map to 0 and are counted.
  int judge_reasoning(std::string_view x, std::string_view y_star, std::string_view y_tilde,
                      std::string* raw_reply = nullptr, bool* backend_failed = nullptr);

  VerificationOutcome gate(std::string_view x, std::string_view y_star, std::string_view y_tilde);

  VerifierCounters counters() const;
  const std::string& judge_template() const { return judge_template_; }

 private:
  Gateway& gateway_;
  std::string judge_template_;
  std::atomic<std::size_t> judge_calls_{0};
  std::atomic<std::size_t> unparseable_{0};
  std::atomic<std::size_t> backend_failures_{0};
};

}  // namespace rewriter
