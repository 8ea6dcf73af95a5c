#include "rewriter/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "rewriter/error.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/random.hpp"
#include "rewriter/templates.hpp"

namespace rewriter {

using nlohmann::json;

std::string_view to_string(ConstructionMode mode) {
  return mode == ConstructionMode::fallback ? "fallback" : "success_only";
}

ConstructionMode parse_construction_mode(std::string_view name) {
  if (name == "fallback") return ConstructionMode::fallback;
  if (name == "success_only") return ConstructionMode::success_only;
  throw ConfigError("stage2.mode must be 'fallback' or 'success_only', got '" + std::string(name) + "'");
}

void ConstructionReport::recompute_yield() {
  tc_yield = total > 0 ? static_cast<double>(rewrites_adopted) / static_cast<double>(total) : 0.0;
}

json ConstructionReport::to_json() const {
  return {{"total", total},
          {"rewrites_adopted", rewrites_adopted},
          {"fallbacks", fallbacks},
          {"tc_yield", tc_yield},
          {"answer_mismatch", answer_mismatch},
          {"judge_invalid", judge_invalid},
          {"extraction_failure", extraction_failure},
          {"backend_failure", backend_failure}};
}

ConstructionReport ConstructionReport::from_json(const json& j) {
  try {
    ConstructionReport r;
    r.total = j.at("total").get<std::size_t>();
    r.rewrites_adopted = j.at("rewrites_adopted").get<std::size_t>();
    r.fallbacks = j.at("fallbacks").get<std::size_t>();
    r.answer_mismatch = j.value("answer_mismatch", std::size_t{0});
    r.judge_invalid = j.value("judge_invalid", std::size_t{0});
    r.extraction_failure = j.value("extraction_failure", std::size_t{0});
    r.backend_failure = j.value("backend_failure", std::size_t{0});
    if (r.rewrites_adopted > r.total) throw ValidationError("report: more rewrites than samples");
    r.recompute_yield();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("construction report: ") + e.what());
  }
}

namespace {

SampleTrace process_sample(const ExpertSample& sample, std::size_t index, Gateway& gateway,
                           Verifier& verifier, const BuildOptions& options) {
  SampleTrace trace;
  trace.sample_id = sample.id;
  const auto prompt = render_rewriting_prompt(options.prompt_template, sample.input_x, sample.expert_y);
  for (std::size_t attempt = 0; attempt < options.attempts; ++attempt) {
    GenerationRequest request;
    request.prompt = prompt;
    request.n = 1;
    request.max_new_tokens = options.max_new_tokens;
    request.temperature = options.temperature;
    request.top_p = options.top_p;
    request.seed = mix_seed(mix_seed(options.seed, index), attempt);
    std::string rewrite;
    try {
      rewrite = gateway.generate(request).front();
    } catch (const BackendError&) {
      trace.cause = FailureCause::backend_failure;
      continue;
    } catch (const ProtocolError&) {
      trace.cause = FailureCause::backend_failure;
      continue;
    }
    auto outcome = verifier.gate(sample.input_x, sample.expert_y, rewrite);
    trace.rewrites.push_back(std::move(rewrite));
    trace.outcomes.push_back(outcome);
    if (outcome.r_task == 1) {
      trace.adopted = trace.rewrites.size() - 1;
      trace.cause = FailureCause::none;
      break;
    }
    trace.cause = outcome.cause;
  }
  return trace;
}

}  // namespace

BuildResult build_dataset(std::span<const ExpertSample> samples, Gateway& gateway,
                          const BuildOptions& options) {
  if (!has_placeholder(options.prompt_template, "question") ||
      !has_placeholder(options.prompt_template, "original_solution")) {
    throw ConfigError("rewriting prompt must contain {question} and {original_solution}");
  }
  if (options.attempts < 1) throw ConfigError("stage2.attempts must be >= 1");
  gateway.require(Capability::generate);
  gateway.require(Capability::judge);
  Verifier verifier(gateway, options.judge_template);

  std::vector<SampleTrace> traces(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < samples.size(); i = next.fetch_add(1)) {
      try {
        traces[i] = process_sample(samples[i], i, gateway, verifier, options);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(samples.size());
      }
    }
  };
  const std::size_t n_workers = std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(1, samples.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  BuildResult result;
  auto& report = result.report;
  report.total = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& trace = traces[i];
    if (trace.adopted) {
      ++report.rewrites_adopted;
      result.records.push_back(RewrittenRecord::rewrite_for(samples[i], trace.rewrites[*trace.adopted], *trace.adopted));
      continue;
    }
    switch (trace.cause) {
      case FailureCause::answer_mismatch: ++report.answer_mismatch; break;
      case FailureCause::judge_invalid: ++report.judge_invalid; break;
      case FailureCause::extraction_failure: ++report.extraction_failure; break;
      case FailureCause::backend_failure: ++report.backend_failure; break;
      case FailureCause::none: break;
    }
    if (options.mode == ConstructionMode::fallback) {
      ++report.fallbacks;
      result.records.push_back(RewrittenRecord::fallback_for(samples[i]));
    }
  }
  report.recompute_yield();
  result.traces = std::move(traces);
  return result;
}

ConstructionReport yield_stats(std::span<const ConstructionReport> shards) {
  ConstructionReport sum;
  for (const auto& s : shards) {
    sum.total += s.total;
    sum.rewrites_adopted += s.rewrites_adopted;
    sum.fallbacks += s.fallbacks;
    sum.answer_mismatch += s.answer_mismatch;
    sum.judge_invalid += s.judge_invalid;
    sum.extraction_failure += s.extraction_failure;
    sum.backend_failure += s.backend_failure;
  }
  sum.recompute_yield();
  return sum;
}

json InstabilityReport::to_json() const {
  json items = json::array();
  for (const auto& e : entries) {
    items.push_back({{"id", e.id},
                     {"token_count", e.token_count},
                     {"nll_per_token", e.nll_per_token},
                     {"sequence_logprob", e.sequence_logprob},
                     {"implied_weight_log", e.implied_weight_log}});
  }
  return {{"samples", std::move(items)},
          {"summary",
           {{"count", entries.size()},
            {"skipped", skipped},
            {"min_implied_weight_log", min_log_weight},
            {"median_implied_weight_log", median_log_weight},
            {"max_implied_weight_log", max_log_weight},
            {"threshold", threshold},
            {"fraction_above_threshold", fraction_above_threshold}}}};
}

InstabilityReport instability_report(std::span<const ExpertSample> samples, Gateway& gateway,
                                     double log_weight_threshold) {
  gateway.require(Capability::score);
  InstabilityReport report;
  report.threshold = log_weight_threshold;
  for (const auto& sample : samples) {
    ScoreResult scored;
    try {
      scored = gateway.score(ScoreRequest{sample.input_x, sample.expert_y});
    } catch (const BackendError&) {
      ++report.skipped;
      continue;
    } catch (const ProtocolError&) {
      ++report.skipped;
      continue;
    }
    InstabilityEntry e;
    e.id = sample.id;
    e.token_count = scored.token_count;
    e.sequence_logprob = scored.sequence_logprob();
    e.nll_per_token = -e.sequence_logprob / static_cast<double>(scored.token_count);
    e.implied_weight_log = -e.sequence_logprob;
    report.entries.push_back(std::move(e));
  }
  if (!report.entries.empty()) {
    std::vector<double> w;
    for (const auto& e : report.entries) w.push_back(e.implied_weight_log);
    std::sort(w.begin(), w.end());
    report.min_log_weight = w.front();
    report.max_log_weight = w.back();
    const std::size_t n = w.size();
    report.median_log_weight = n % 2 == 1 ? w[n / 2] : 0.5 * (w[n / 2 - 1] + w[n / 2]);
    const auto above = std::count_if(w.begin(), w.end(), [&](double v) { return v > log_weight_threshold; });
    report.fraction_above_threshold = static_cast<double>(above) / static_cast<double>(n);
  }
  return report;
}

}  // namespace rewriter
