#include <gtest/gtest.h>

#include <map>
#include <string>
#include <utility>

#include "rewriter/error.hpp"
#include "rewriter/random.hpp"
#include "rewriter/templates.hpp"
#include "rewriter/verifier.hpp"
#include "support.hpp"

using namespace rewriter;
using testing_support::mock;

TEST(ExtractAnswer, CaseStudySolutions) {
  for (const auto& j : testing_support::read_jsonl(testing_support::fixture("base8_case.jsonl"))) {
    EXPECT_EQ(extract_answer(j["candidate"].get<std::string>()), "777_8") << j["id"];
    EXPECT_EQ(extract_answer(j["target"].get<std::string>()), "777_8");
  }
}

TEST(ExtractAnswer, PromptFormatExample) {
  const std::string prompt(kRewritingPrompt);
  const auto end = prompt.find("$\\boxed{56}$");
  ASSERT_NE(end, std::string::npos);
  EXPECT_EQ(extract_answer(prompt.substr(0, end + 12)), "56");
}

TEST(ExtractAnswer, NoBoxedConstruct) { EXPECT_FALSE(extract_answer("the answer is 42.")); }

TEST(ExtractAnswer, LastBoxWins) {
  EXPECT_EQ(extract_answer("first $\\boxed{1}$ then $\\boxed{2}$"), "2");
}

TEST(ExtractAnswer, NestedBraces) {
  EXPECT_EQ(extract_answer("$\\boxed{\\frac{1}{2}}$"), "\\frac{1}{2}");
  EXPECT_EQ(extract_answer("\\boxed{x^{2}+1}"), "x^{2}+1");
}

TEST(ExtractAnswer, UnbalancedIsFailure) {
  EXPECT_FALSE(extract_answer("\\boxed{\\frac{1}{2}"));
  EXPECT_FALSE(extract_answer("\\boxed{"));
}

TEST(ExtractAnswer, EmptyBoxIsFailure) { EXPECT_FALSE(extract_answer("\\boxed{}")); }

TEST(ExtractAnswer, Normalization) {
  EXPECT_EQ(extract_answer("\\boxed{  12   apples }"), "12 apples");
  EXPECT_EQ(extract_answer("\\boxed{\\text{yes}}"), "yes");
  EXPECT_EQ(extract_answer("\\boxed{$7$}"), "7");
  EXPECT_EQ(extract_answer("\\boxed {5}"), "5");
  EXPECT_EQ(extract_answer("\\boxed{3\\,000}"), "3 000");
}

TEST(ExtractAnswer, IdempotentWhenReboxed) {
  const std::string alphabet = "ab1 \\{}_^$.,-/";
  Rng rng(11);
  int checked = 0;
  for (int i = 0; i < 5000; ++i) {
    std::string body;
    const auto len = 1 + rng.below(10);
    for (std::size_t k = 0; k < len; ++k) body += alphabet[rng.below(alphabet.size())];
    const auto first = extract_answer("\\boxed{" + body + "}");
    if (!first) continue;
    ++checked;
    EXPECT_EQ(extract_answer("\\boxed{" + *first + "}"), first) << body;
  }
  EXPECT_GT(checked, 100);
}

TEST(CheckAnswer, Examples) {
  EXPECT_EQ(check_answer("so $\\boxed{777_8}$", "is $\\boxed{777_8}$"), 1);
  EXPECT_EQ(check_answer("$\\boxed{0.5}$", "$\\boxed{1/2}$"), 1);
  EXPECT_EQ(check_answer("$\\boxed{56}$", "$\\boxed{57}$"), 0);
  EXPECT_EQ(check_answer("no box", "$\\boxed{1}$"), 0);
  EXPECT_EQ(compare_answers("no box", "$\\boxed{1}$"), AnswerCheck::extraction_failure);
}

TEST(CheckAnswer, RationalEquivalence) {
  // Hand-evaluated value of each surface form.
  const std::vector<std::pair<std::string, std::pair<long, long>>> forms = {
      {"1/2", {1, 2}},        {"0.5", {1, 2}},         {"\\frac{1}{2}", {1, 2}}, {"2/4", {1, 2}},
      {"0.50", {1, 2}},       {"\\dfrac{2}{4}", {1, 2}}, {"1000", {1000, 1}},  {"1,000", {1000, 1}},
      {"-3", {-3, 1}},        {"-\\frac{6}{2}", {-3, 1}}, {"-3.0", {-3, 1}},   {"0.125", {1, 8}},
      {"\\tfrac{1}{8}", {1, 8}}, {"7", {7, 1}},        {"007", {7, 1}},
  };
  for (const auto& [a, va] : forms) {
    for (const auto& [b, vb] : forms) {
      const bool same = va.first * vb.second == vb.first * va.second;
      EXPECT_EQ(check_answer("\\boxed{" + a + "}", "\\boxed{" + b + "}"), same ? 1 : 0) << a << " vs " << b;
    }
  }
}

TEST(CheckAnswer, MalformedNumbersFallBackToStrings) {
  EXPECT_EQ(check_answer("\\boxed{1,00}", "\\boxed{100}"), 0);
  EXPECT_EQ(check_answer("\\boxed{1/0}", "\\boxed{2/0}"), 0);
  EXPECT_EQ(check_answer("\\boxed{1/0}", "\\boxed{1/0}"), 1);
}

TEST(CheckAnswer, Symmetric) {
  const std::vector<std::string> pool = {"1/2", "0.5", "x", "\\text{x}", "3", "3.00", "", "{", "777_8", "1,234"};
  for (const auto& a : pool) {
    for (const auto& b : pool) {
      const auto ca = "$\\boxed{" + a + "}$";
      const auto cb = "$\\boxed{" + b + "}$";
      EXPECT_EQ(check_answer(ca, cb), check_answer(cb, ca)) << a << " / " << b;
    }
  }
}

TEST(ParseVerdict, Protocol) {
  EXPECT_EQ(parse_verdict("VALID"), Verdict::valid);
  EXPECT_EQ(parse_verdict("  invalid.\n"), Verdict::invalid);
  EXPECT_EQ(parse_verdict("Valid"), Verdict::valid);
  EXPECT_EQ(parse_verdict("The reasoning is VALID"), Verdict::unparseable);
  EXPECT_EQ(parse_verdict(""), Verdict::unparseable);
  EXPECT_EQ(parse_verdict("VALID.."), Verdict::unparseable);
}

class GateTest : public ::testing::Test {
 protected:
  const std::string x = "Compute 2 + 3.";
  const std::string ref = "2 + 3 = $\\boxed{5}$";
};

TEST_F(GateTest, WrongAnswerSkipsJudge) {
  auto gw = mock({{"judge", {{"default", "VALID"}}}});
  Verifier v(*gw, std::string(kJudgePrompt));
  const auto o = v.gate(x, ref, "$\\boxed{6}$");
  EXPECT_EQ(o.v_ans, 0);
  EXPECT_FALSE(o.v_rea);
  EXPECT_EQ(o.r_task, 0);
  EXPECT_EQ(o.cause, FailureCause::answer_mismatch);
  EXPECT_EQ(gw->dispatch_count(Capability::judge), 0u);
  EXPECT_TRUE(o.consistent());
}

TEST_F(GateTest, ValidAndInvalidVerdicts) {
  auto gw = mock({{"judge", {{"default", "VALID"}, {"rules", {{{"contains", "sloppy"}, {"reply", "INVALID"}}}}}}});
  Verifier v(*gw, std::string(kJudgePrompt));
  const auto ok = v.gate(x, ref, "clean: $\\boxed{5}$");
  EXPECT_EQ(ok.v_ans, 1);
  EXPECT_EQ(ok.v_rea, 1);
  EXPECT_EQ(ok.r_task, 1);
  const auto bad = v.gate(x, ref, "sloppy: $\\boxed{5}$");
  EXPECT_EQ(bad.v_ans, 1);
  EXPECT_EQ(bad.v_rea, 0);
  EXPECT_EQ(bad.r_task, 0);
  EXPECT_EQ(bad.cause, FailureCause::judge_invalid);
  EXPECT_EQ(v.counters().judge_calls, 2u);
}

TEST_F(GateTest, JudgePromptCarriesAllThreeTexts) {
  // The rule only fires if the rendered prompt contains the candidate text.
  auto gw = mock({{"judge", {{"default", "INVALID"}, {"rules", {{{"contains", "UNIQUE-CANDIDATE"}, {"reply", "VALID"}}}}}}});
  Verifier v(*gw, "Q={question} E={expert_solution} C={candidate_solution}");
  EXPECT_EQ(v.gate(x, ref, "UNIQUE-CANDIDATE $\\boxed{5}$").r_task, 1);
}

TEST_F(GateTest, UnparseableVerdictCounted) {
  auto gw = mock({{"judge", {{"default", "I think it's fine"}}}});
  Verifier v(*gw, std::string(kJudgePrompt));
  const auto o = v.gate(x, ref, "$\\boxed{5}$");
  EXPECT_EQ(o.r_task, 0);
  EXPECT_EQ(o.v_rea, 0);
  EXPECT_EQ(v.counters().unparseable_verdicts, 1u);
}

TEST_F(GateTest, JudgeBackendFailureMapsToZero) {
  auto gw = mock({{"judge", {{"default", "VALID"}}}, {"failures", {{"judge", -1}}}}, {3, 0.0, 1.0});
  Verifier v(*gw, std::string(kJudgePrompt));
  const auto o = v.gate(x, ref, "$\\boxed{5}$");
  EXPECT_EQ(o.r_task, 0);
  EXPECT_EQ(o.v_rea, 0);
  EXPECT_EQ(v.counters().judge_backend_failures, 1u);
  EXPECT_EQ(gw->dispatch_count(Capability::judge), 3u);
}

TEST_F(GateTest, MissingJudgeCapabilityPropagates) {
  auto gw = mock({{"generate", {{"default", "x"}}}});
  Verifier v(*gw, std::string(kJudgePrompt));
  EXPECT_THROW(v.gate(x, ref, "$\\boxed{5}$"), CapabilityError);
}

TEST_F(GateTest, TemplateMustHavePlaceholders) {
  auto gw = mock({{"judge", {{"default", "VALID"}}}});
  EXPECT_THROW(Verifier(*gw, "{question} {candidate_solution}"), ConfigError);
}

TEST(GateLaws, RandomizedOutcomes) {
  const std::vector<std::string> answers = {"1", "2", "1/2", "0.5", "x"};
  const std::vector<std::string> replies = {"VALID", "INVALID", "maybe"};
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    auto gw = mock({{"judge", {{"default", replies[rng.below(replies.size())]}}}});
    Verifier v(*gw, std::string(kJudgePrompt));
    const auto cand = rng.below(6) == 0 ? std::string("none") : "\\boxed{" + answers[rng.below(answers.size())] + "}";
    const auto refr = "\\boxed{" + answers[rng.below(answers.size())] + "}";
    const auto o = v.gate("q", refr, cand);
    ASSERT_TRUE(o.consistent());
    ASSERT_EQ(o.v_ans, check_answer(cand, refr));
    if (o.v_ans == 0) ASSERT_EQ(gw->dispatch_count(Capability::judge), 0u);
  }
}
