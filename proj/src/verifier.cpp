#include "rewriter/verifier.hpp"

#include <algorithm>
#include <cctype>

#include <boost/multiprecision/cpp_int.hpp>

#include "rewriter/error.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/templates.hpp"

namespace rewriter {

using nlohmann::json;
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Position one past the '}' matching the '{' at `open`, or npos. A backslash
// escapes the following character, so \{ and \} do not count.
std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\\') {
      ++i;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}' && --depth == 0) return i + 1;
  }
  return std::string_view::npos;
}

bool strip_pair(std::string& s, std::string_view open, std::string_view close) {
  if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
    s = s.substr(open.size(), s.size() - open.size() - close.size());
    return true;
  }
  return false;
}

bool drop_text_wrappers(std::string& s) {
  constexpr std::string_view kText = "\\text{";
  bool changed = false;
  std::size_t pos = 0;
  while ((pos = s.find(kText, pos)) != std::string::npos) {
    // Skip "\\text{" where the backslash is itself escaped.
    std::size_t run = 0;
    while (pos > run && s[pos - run - 1] == '\\') ++run;
    if (run % 2 == 1) {
      pos += kText.size();
      continue;
    }
    const std::size_t open = pos + kText.size() - 1;
    const std::size_t end = match_brace(s, open);
    if (end == std::string::npos) break;
    s = s.substr(0, pos) + s.substr(open + 1, end - open - 2) + s.substr(end);
    changed = true;
  }
  return changed;
}

std::string collapse_spaces(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (c == '\\' && i + 1 < s.size()) {
      const char next = s[i + 1];
      if (is_space(next) || next == ',' || next == ';' || next == ':') {
        pending = true;
        ++i;
        continue;
      }
      if (next == '!') {
        ++i;
        continue;
      }
      if (pending && !out.empty()) out += ' ';
      pending = false;
      out += c;
      out += next;
      ++i;
      continue;
    }
    if (is_space(c)) {
      pending = true;
      continue;
    }
    if (pending && !out.empty()) out += ' ';
    pending = false;
    out += c;
  }
  return out;
}

// --- numeric equivalence ---------------------------------------------------

std::optional<Rational> parse_decimal(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;

  // Thousands separators are accepted only in the strict 1,234,567 layout.
  std::string digits;
  const auto dot = s.find('.');
  std::string_view int_part = s.substr(0, dot);
  std::string_view frac_part = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (int_part.find(',') != std::string_view::npos) {
    std::size_t first = int_part.find(',');
    if (first == 0 || first > 3) return std::nullopt;
    for (std::size_t i = first; i < int_part.size(); i += 4) {
      if (int_part[i] != ',' || i + 4 > int_part.size()) return std::nullopt;
      for (std::size_t k = 1; k <= 3; ++k) {
        if (!is_digit(int_part[i + k])) return std::nullopt;
      }
    }
  }
  for (char c : int_part) {
    if (c == ',') continue;
    if (!is_digit(c)) return std::nullopt;
    digits += c;
  }
  if (dot != std::string_view::npos && frac_part.empty() && digits.empty()) return std::nullopt;
  for (char c : frac_part) {
    if (!is_digit(c)) return std::nullopt;
  }
  if (digits.empty() && frac_part.empty()) return std::nullopt;

  BigInt numerator(digits.empty() ? std::string("0") : digits);
  BigInt denominator = 1;
  for (char c : frac_part) {
    numerator = numerator * 10 + (c - '0');
    denominator *= 10;
  }
  Rational value(numerator, denominator);
  return negative ? Rational(-value) : value;
}

std::optional<Rational> parse_number(std::string_view raw) {
  std::string s;
  for (char c : raw) {
    if (!is_space(c)) s += c;
  }
  std::string_view v = s;
  bool negative = false;
  if (v.starts_with('-') &&
      (v.substr(1).starts_with("\\frac") || v.substr(1).starts_with("\\dfrac") ||
       v.substr(1).starts_with("\\tfrac"))) {
    negative = true;
    v.remove_prefix(1);
  }
  for (std::string_view cmd : {"\\frac", "\\dfrac", "\\tfrac"}) {
    if (!v.starts_with(cmd) || v.size() <= cmd.size() || v[cmd.size()] != '{') continue;
    const std::size_t open1 = cmd.size();
    const std::size_t end1 = match_brace(v, open1);
    if (end1 == std::string_view::npos || end1 >= v.size() || v[end1] != '{') return std::nullopt;
    const std::size_t end2 = match_brace(v, end1);
    if (end2 != v.size()) return std::nullopt;
    auto num = parse_decimal(v.substr(open1 + 1, end1 - open1 - 2));
    auto den = parse_decimal(v.substr(end1 + 1, end2 - end1 - 2));
    if (!num || !den || *den == 0) return std::nullopt;
    Rational q = *num / *den;
    return negative ? Rational(-q) : q;
  }
  if (const auto slash = v.find('/'); slash != std::string_view::npos) {
    auto num = parse_decimal(v.substr(0, slash));
    auto den = parse_decimal(v.substr(slash + 1));
    if (!num || !den || *den == 0) return std::nullopt;
    return *num / *den;
  }
  return parse_decimal(v);
}

}  // namespace

std::string normalize_answer(std::string_view raw) {
  std::string s(raw);
  for (;;) {
    std::string before = s;
    s = collapse_spaces(trim(s));
    while (strip_pair(s, "$", "$") || strip_pair(s, "\\(", "\\)") || strip_pair(s, "\\[", "\\]")) {
      s = std::string(trim(s));
    }
    drop_text_wrappers(s);
    if (s == before) break;
  }
  // A lone trailing backslash would escape the closing brace when re-boxed.
  std::size_t run = 0;
  while (run < s.size() && s[s.size() - 1 - run] == '\\') ++run;
  if (run % 2 == 1) {
    s.pop_back();
    s = std::string(trim(s));
  }
  return s;
}

std::optional<std::string> extract_answer(std::string_view solution) {
  constexpr std::string_view kBoxed = "\\boxed";
  std::size_t search_end = solution.size();
  while (search_end > 0) {
    const auto pos = solution.rfind(kBoxed, search_end - 1);
    if (pos == std::string_view::npos) return std::nullopt;
    std::size_t open = pos + kBoxed.size();
    while (open < solution.size() && is_space(solution[open])) ++open;
    if (open < solution.size() && solution[open] == '{') {
      const auto end = match_brace(solution, open);
      if (end == std::string_view::npos) return std::nullopt;
      auto answer = normalize_answer(solution.substr(open + 1, end - open - 2));
      if (answer.empty()) return std::nullopt;
      return answer;
    }
    // "\boxed" not followed by a brace group (e.g. "\boxedfoo"); keep looking.
    search_end = pos;
  }
  return std::nullopt;
}

AnswerCheck compare_answers(std::string_view candidate, std::string_view reference) {
  const auto a = extract_answer(candidate);
  const auto b = extract_answer(reference);
  if (!a || !b) return AnswerCheck::extraction_failure;
  if (*a == *b) return AnswerCheck::match;
  const auto na = parse_number(*a);
  const auto nb = parse_number(*b);
  if (na && nb && *na == *nb) return AnswerCheck::match;
  return AnswerCheck::mismatch;
}

int check_answer(std::string_view candidate, std::string_view reference) {
  return compare_answers(candidate, reference) == AnswerCheck::match ? 1 : 0;
}

Verdict parse_verdict(std::string_view reply) {
  auto s = trim(reply);
  if (s.ends_with('.')) s.remove_suffix(1);
  std::string upper(s);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "VALID") return Verdict::valid;
  if (upper == "INVALID") return Verdict::invalid;
  return Verdict::unparseable;
}

std::string_view to_string(FailureCause cause) {
  switch (cause) {
    case FailureCause::none: return "none";
    case FailureCause::extraction_failure: return "extraction_failure";
    case FailureCause::answer_mismatch: return "answer_mismatch";
    case FailureCause::judge_invalid: return "judge_invalid";
    case FailureCause::backend_failure: return "backend_failure";
  }
  return "unknown";
}

bool VerificationOutcome::consistent() const {
  if (v_ans != 0 && v_ans != 1) return false;
  if (r_task != 0 && r_task != 1) return false;
  if (v_ans == 0 && v_rea.has_value()) return false;
  if (v_ans == 1 && !v_rea.has_value()) return false;
  return r_task == v_ans * v_rea.value_or(0);
}

json VerificationOutcome::to_json() const {
  json j = {{"v_ans", v_ans}, {"r_task", r_task}, {"cause", to_string(cause)}};
  j["v_rea"] = v_rea ? json(*v_rea) : json("skipped");
  j["extracted_answer"] = extracted_answer ? json(*extracted_answer) : json(nullptr);
  if (judge_raw) j["judge_raw"] = *judge_raw;
  return j;
}

Verifier::Verifier(Gateway& gateway, std::string judge_template)
    : gateway_(gateway), judge_template_(std::move(judge_template)) {
  for (std::string_view name : {"question", "expert_solution", "candidate_solution"}) {
    if (!has_placeholder(judge_template_, name)) {
      throw ConfigError("judge template lacks the {" + std::string(name) + "} placeholder");
    }
  }
}

int Verifier::judge_reasoning(std::string_view x, std::string_view y_star,
                              std::string_view y_tilde, std::string* raw_reply,
                              bool* backend_failed) {
  const auto prompt = render_template(judge_template_, {{"question", std::string(x)},
                                                        {"expert_solution", std::string(y_star)},
                                                        {"candidate_solution", std::string(y_tilde)}});
  judge_calls_.fetch_add(1);
  std::string reply;
  try {
    reply = gateway_.judge(prompt);
  } catch (const BackendError&) {
    backend_failures_.fetch_add(1);
    if (backend_failed) *backend_failed = true;
    return 0;
  } catch (const ProtocolError&) {
    backend_failures_.fetch_add(1);
    if (backend_failed) *backend_failed = true;
    return 0;
  }
  if (raw_reply) *raw_reply = reply;
  switch (parse_verdict(reply)) {
    case Verdict::valid: return 1;
    case Verdict::invalid: return 0;
    case Verdict::unparseable:
      unparseable_.fetch_add(1);
      return 0;
  }
  return 0;
}

VerificationOutcome Verifier::gate(std::string_view x, std::string_view y_star,
                                   std::string_view y_tilde) {
  VerificationOutcome out;
  out.extracted_answer = extract_answer(y_tilde);
  switch (compare_answers(y_tilde, y_star)) {
    case AnswerCheck::extraction_failure:
      out.cause = FailureCause::extraction_failure;
      return out;
    case AnswerCheck::mismatch:
      out.cause = FailureCause::answer_mismatch;
      return out;
    case AnswerCheck::match:
      break;
  }
  out.v_ans = 1;
  std::string raw;
  bool backend_failed = false;
  out.v_rea = judge_reasoning(x, y_star, y_tilde, &raw, &backend_failed);
  if (!backend_failed) out.judge_raw = raw;
  out.r_task = out.v_ans * *out.v_rea;
  if (out.r_task == 0) {
    out.cause = backend_failed ? FailureCause::backend_failure : FailureCause::judge_invalid;
  }
  return out;
}

VerifierCounters Verifier::counters() const {
  return {judge_calls_.load(), unparseable_.load(), backend_failures_.load()};
}

}  // namespace rewriter
