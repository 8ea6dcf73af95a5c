#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace rewriter {

/// Stage I/II generation template; placeholders {question}, {original_solution}.
/// Identical to assets/prompts/rewriting_prompt.txt.
extern const std::string_view kRewritingPrompt;

/// Judge template; placeholders {question}, {expert_solution},
/// {candidate_solution}. Identical to assets/prompts/judge_prompt.txt.
extern const std::string_view kJudgePrompt;

/// Replaces each `{name}` whose name is a key of `values`; every other brace
/// (e.g. the literal `\boxed{}` in the rewriting template) is left untouched.
/// Substituted text is never rescanned.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values);

/// True when `{name}` occurs in the template.
bool has_placeholder(std::string_view tmpl, std::string_view name);

std::string render_rewriting_prompt(std::string_view tmpl, std::string_view question,
                                    std::string_view original_solution);

std::string load_text_file(const std::filesystem::path& path);

}  // namespace rewriter
