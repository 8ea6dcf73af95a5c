#include "rewriter/templates.hpp"

#include <fstream>
#include <sstream>

#include "rewriter/error.hpp"

namespace rewriter {

const std::string_view kRewritingPrompt = R"PROMPT(You are an expert in math word problems. Below is a math word problem and an existing step-by-step solution.
Please rewrite the solution in your own words while keeping all reasoning steps correct and keeping the final answer the same.
Follow these rules:
- Keep the explanation clear and step by step.
- Do NOT mention that you are rewriting another solution.
- At the end, on a separate line, output ONLY the final answer in LaTeX boxed format, exactly like:
$\boxed{56}$
Use dollar signs and \boxed{} exactly as shown.

Problem:
{question}

Existing solution (for reference, do NOT copy it verbatim):
{original_solution})PROMPT";

const std::string_view kJudgePrompt = R"PROMPT(You are a strict grader of step-by-step math solutions.
You are given a problem, a reference solution, and a candidate solution whose final answer already matches the reference.
Decide whether the candidate's reasoning is valid: every step must be logically sound, consistent with the reference solution's approach or an equally correct one, and actually support the final answer.

Problem:
{question}

Reference solution:
{expert_solution}

Candidate solution:
{candidate_solution}

Reply with exactly one word: VALID if the candidate's reasoning is sound and consistent, INVALID otherwise. Do not output anything else.)PROMPT";

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = tmpl.substr(i + 1, close - i - 1);
        if (auto it = values.find(name); it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tmpl[i++];
  }
  return out;
}

bool has_placeholder(std::string_view tmpl, std::string_view name) {
  std::string needle = "{";
  needle += name;
  needle += "}";
  return tmpl.find(needle) != std::string_view::npos;
}

std::string render_rewriting_prompt(std::string_view tmpl, std::string_view question,
                                    std::string_view original_solution) {
  return render_template(tmpl, {{"question", std::string(question)},
                                {"original_solution", std::string(original_solution)}});
}

std::string load_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace rewriter
