#include "rewriter/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rewriter/config.hpp"
#include "rewriter/corpus.hpp"
#include "rewriter/error.hpp"
#include "rewriter/gateway.hpp"
#include "rewriter/grpo.hpp"
#include "rewriter/mock_gateway.hpp"
#include "rewriter/pipeline.hpp"
#include "rewriter/random.hpp"
#include "rewriter/reward.hpp"
#include "rewriter/templates.hpp"
#include "rewriter/toy_policy.hpp"
#include "rewriter/verifier.hpp"

namespace rewriter {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Stand-in when no gateway is configured; every capability check fails.
class NoBackend final : public Gateway {
 public:
  NoBackend() : Gateway(CapabilitySet{}, {}) {}
  json describe() const override { return {{"backend", "none"}}; }

 protected:
  std::vector<std::string> do_generate(const GenerationRequest&) override { return {}; }
  ScoreResult do_score(const ScoreRequest&) override { return {}; }
  std::vector<double> do_embed(std::string_view) override { return {}; }
  std::string do_judge(std::string_view) override { return {}; }
  std::size_t do_tokenize(std::string_view) override { return 0; }
};

std::unique_ptr<Gateway> open_gateway(const RunConfig& config) {
  if (config.gateway.url.empty()) return std::make_unique<NoBackend>();
  return make_gateway(config.gateway);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const fs::path& path) { return hex64(fnv1a64(load_text_file(path))); }

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw IoError("write error on '" + path.string() + "'");
}

fs::path sibling(const std::string& output, const std::string& suffix) { return output + suffix; }

// Parsed command line shared by every subcommand.
struct Invocation {
  std::string command;
  json resolved;
  RunConfig config;
  std::vector<std::string> report_paths;  // stats only
};

struct Manifest {
  json body = json::object();

  Manifest(const Invocation& inv, const Gateway* gateway) {
    body["command"] = inv.command;
    body["config"] = inv.resolved;
    body["config_hash"] = config_hash(inv.resolved);
    body["seed"] = inv.config.seed;
    body["gateway"] = gateway ? gateway->describe() : json(nullptr);
    body["inputs"] = json::array();
    body["outputs"] = json::array();
  }
  void input(const fs::path& p) { body["inputs"].push_back({{"path", p.string()}, {"fnv1a64", file_hash(p)}}); }
  void output(const fs::path& p) { body["outputs"].push_back({{"path", p.string()}, {"fnv1a64", file_hash(p)}}); }
  void write(const std::string& output) const {
    write_text(sibling(output, ".manifest.json"), body.dump(2) + "\n");
  }
};

std::string judge_template(const RunConfig& c) {
  return c.stage2.judge_prompt_path.empty() ? std::string(kJudgePrompt)
                                            : load_text_file(c.stage2.judge_prompt_path);
}

std::string rewriting_template(const RunConfig& c) {
  return c.stage2.prompt_path.empty() ? std::string(kRewritingPrompt)
                                      : load_text_file(c.stage2.prompt_path);
}

const std::string& require_input(const RunConfig& c) {
  if (c.corpus.input.empty()) throw ConfigError("--input (corpus.input) is required");
  return c.corpus.input;
}

// Reads a JSONL file, calling `fn(object, line_number)` for each non-blank line.
void for_each_line(const fs::path& path, const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ValidationError(path.filename().string() + ":" + std::to_string(n) + ": not a JSON object");
    }
    fn(j, n);
  }
  if (in.bad()) throw IoError("read error in '" + path.string() + "'");
}

std::string required_string(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw ValidationError(where + ": field '" + key + "' must be a string");
  }
  return j[key].get<std::string>();
}

// --- verify -----------------------------------------------------------------

int cmd_verify(const Invocation& inv, std::ostream& out) {
  const auto& c = inv.config;
  const fs::path input = require_input(c);
  auto gateway = open_gateway(c);
  gateway->require(Capability::judge);
  Verifier verifier(*gateway, judge_template(c));

  std::ostringstream records;
  std::size_t total = 0, answer_pass = 0, passed = 0;
  for_each_line(input, [&](const json& j, std::size_t line) {
    const std::string where = input.filename().string() + ":" + std::to_string(line);
    const std::string id = j.contains("id") ? required_string(j, "id", where) : where;
    const auto outcome = verifier.gate(required_string(j, "input", where), required_string(j, "target", where),
                                       required_string(j, "candidate", where));
    ++total;
    answer_pass += static_cast<std::size_t>(outcome.v_ans);
    passed += static_cast<std::size_t>(outcome.r_task);
    json rec = outcome.to_json();
    rec["id"] = id;
    records << rec.dump() << "\n";
  });
  const auto counters = verifier.counters();
  const json summary = {{"total", total},
                        {"answer_pass", answer_pass},
                        {"passed", passed},
                        {"judge_calls", counters.judge_calls},
                        {"unparseable_verdicts", counters.unparseable_verdicts},
                        {"judge_backend_failures", counters.judge_backend_failures}};
  if (c.corpus.output.empty()) {
    out << records.str();
  } else {
    write_text(c.corpus.output, records.str());
    Manifest m(inv, gateway.get());
    m.input(input);
    m.output(c.corpus.output);
    m.body["report"] = summary;
    m.write(c.corpus.output);
  }
  out << json{{"summary", summary}}.dump() << "\n";
  return kExitOk;
}

// --- score ------------------------------------------------------------------

Embedding unit(const json& v, const std::string& where) {
  Embedding e;
  try {
    e = v.get<Embedding>();
  } catch (const json::exception&) {
    throw ValidationError(where + ": embedding must be an array of numbers");
  }
  double norm = 0.0;
  for (double x : e) norm += x * x;
  norm = std::sqrt(norm);
  if (e.empty() || !(norm > 0.0) || !std::isfinite(norm)) {
    throw ValidationError(where + ": embedding must be non-empty with a finite nonzero norm");
  }
  for (double& x : e) x /= norm;
  return e;
}

RewriteGroup parse_group(const json& j, const std::string& where, std::optional<Verifier>& verifier,
                         Gateway& gateway, const std::string& judge) {
  RewriteGroup g;
  g.sample_id = j.contains("sample_id") ? required_string(j, "sample_id", where) : where;
  g.input_x = required_string(j, "input", where);
  if (j.contains("reference")) g.expert_y = required_string(j, "reference", where);
  if (!j.contains("candidates") || !j["candidates"].is_array() || j["candidates"].empty()) {
    throw ValidationError(where + ": 'candidates' must be a non-empty array");
  }
  const auto& cands = j["candidates"];
  g.candidates.resize(cands.size());
  g.reset_signals();
  for (std::size_t k = 0; k < cands.size(); ++k) {
    const std::string cw = where + " candidate " + std::to_string(k);
    const auto& cj = cands[k];
    std::optional<int> r_task;
    if (cj.is_string()) {
      g.candidates[k] = cj.get<std::string>();
    } else if (cj.is_object()) {
      g.candidates[k] = required_string(cj, "text", cw);
      if (cj.contains("r_task")) {
        if (!cj["r_task"].is_number_integer() || (cj["r_task"] != 0 && cj["r_task"] != 1)) {
          throw ValidationError(cw + ": r_task must be 0 or 1");
        }
        r_task = cj["r_task"].get<int>();
      }
      if (cj.contains("nll")) {
        if (!cj["nll"].is_number() || !std::isfinite(cj["nll"].get<double>())) {
          throw ValidationError(cw + ": nll must be a finite number");
        }
        g.nll[k] = cj["nll"].get<double>();
      }
      if (cj.contains("embedding")) g.embeddings[k] = unit(cj["embedding"], cw);
    } else {
      throw ValidationError(cw + ": must be a string or an object");
    }
    if (r_task) {
      auto& o = g.outcomes[k];
      o.v_ans = *r_task;
      o.r_task = *r_task;
      if (*r_task == 1) o.v_rea = 1;
      o.cause = *r_task == 1 ? FailureCause::none : FailureCause::answer_mismatch;
    } else {
      if (!j.contains("reference")) {
        throw ValidationError(cw + ": no r_task given and the group has no 'reference' to verify against");
      }
      if (!verifier) {
        gateway.require(Capability::judge);
        verifier.emplace(gateway, judge);
      }
      g.outcomes[k] = verifier->gate(g.input_x, g.expert_y, g.candidates[k]);
    }
  }
  return g;
}

int cmd_score(const Invocation& inv, std::ostream& out) {
  const auto& c = inv.config;
  const fs::path input = require_input(c);
  auto gateway = open_gateway(c);
  const std::string judge = judge_template(c);
  std::optional<Verifier> verifier;

  std::ostringstream reports;
  std::size_t groups = 0;
  for_each_line(input, [&](const json& j, std::size_t line) {
    auto g = parse_group(j, input.filename().string() + ":" + std::to_string(line), verifier, *gateway, judge);
    acquire_signals(g, *gateway, c.reward.mode);
    assemble(g, c.reward);
    reports << score_report(g).dump() << "\n";
    ++groups;
  });
  if (c.corpus.output.empty()) {
    out << reports.str();
  } else {
    write_text(c.corpus.output, reports.str());
    Manifest m(inv, gateway.get());
    m.input(input);
    m.output(c.corpus.output);
    m.body["report"] = {{"groups", groups}};
    m.write(c.corpus.output);
    out << json{{"groups", groups}}.dump() << "\n";
  }
  return kExitOk;
}

// --- train-agent --------------------------------------------------------------

int cmd_train_agent(const Invocation& inv, std::ostream& out) {
  const auto& c = inv.config;
  if (c.corpus.output.empty()) throw ConfigError("--output (corpus.output) is required");
  auto stage1 = c.stage1;
  stage1.prompt = rewriting_template(c);
  if (!has_placeholder(stage1.prompt, "question") || !has_placeholder(stage1.prompt, "original_solution")) {
    throw ConfigError("rewriting prompt must contain {question} and {original_solution}");
  }
  auto initial = ToyPolicy::random(synthetic_vocabulary(stage1.vocab_size), stage1.context_order,
                                   stage1.temperature, stage1.init_scale, mix_seed(c.seed, 1));
  const auto tasks = make_synthetic_tasks(stage1.num_tasks, mix_seed(c.seed, 2));
  SyntheticTaskGateway gateway(initial);
  const auto result = train_stage1(std::move(initial), tasks, stage1, gateway);

  write_text(c.corpus.output, result.policy.to_json().dump() + "\n");
  std::string metrics;
  for (const auto& m : result.metrics) metrics += m.to_json().dump() + "\n";
  const auto metrics_path = sibling(c.corpus.output, ".metrics.jsonl");
  write_text(metrics_path, metrics);

  json summary = {{"steps", result.metrics.size()}};
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    summary["final_mean_total"] = last.mean_total;
    summary["final_tc_yield"] = last.tc_yield;
  }
  Manifest m(inv, &gateway);
  m.output(c.corpus.output);
  m.output(metrics_path);
  m.body["report"] = summary;
  m.write(c.corpus.output);
  out << summary.dump() << "\n";
  return kExitOk;
}

// --- build-dataset ------------------------------------------------------------

json sample_json(const ExpertSample& s) {
  json j = {{"id", s.id}, {"input", s.input_x}, {"target", s.expert_y}};
  if (!s.meta.is_null()) j["meta"] = s.meta;
  return j;
}

int cmd_build_dataset(const Invocation& inv, std::ostream& out) {
  const auto& c = inv.config;
  const fs::path input = require_input(c);
  if (c.corpus.output.empty()) throw ConfigError("--output (corpus.output) is required");
  auto gateway = open_gateway(c);
  gateway->require(Capability::generate);
  gateway->require(Capability::judge);

  auto ingested = ingest(input, c.corpus.max_tokens, token_counter_for(gateway.get()));
  std::vector<ExpertSample> samples = std::move(ingested.samples);
  std::optional<fs::path> heldout_path;
  std::string heldout_text;
  if (c.corpus.split_fraction) {
    auto parts = split(samples, *c.corpus.split_fraction, mix_seed(c.seed, 3));
    samples = std::move(parts.train);
    for (const auto& s : parts.heldout) heldout_text += sample_json(s).dump() + "\n";
    heldout_path = sibling(c.corpus.output, ".heldout.jsonl");
  }

  BuildOptions opts;
  opts.mode = c.stage2.mode;
  opts.prompt_template = rewriting_template(c);
  opts.judge_template = judge_template(c);
  opts.seed = c.seed;
  opts.temperature = c.stage2.temperature;
  opts.top_p = c.stage2.top_p;
  opts.max_new_tokens = c.stage2.max_new_tokens;
  opts.attempts = c.stage2.attempts;
  opts.concurrency = c.stage2.concurrency;
  const auto result = build_dataset(samples, *gateway, opts);

  write_dataset(result.records, c.corpus.output);
  if (heldout_path) write_text(*heldout_path, heldout_text);

  Manifest m(inv, gateway.get());
  m.input(input);
  m.output(c.corpus.output);
  if (heldout_path) m.output(*heldout_path);
  m.body["ingest"] = ingested.report.to_json();
  m.body["report"] = result.report.to_json();
  m.write(c.corpus.output);
  out << json{{"ingest", ingested.report.to_json()}, {"report", result.report.to_json()}}.dump() << "\n";
  return kExitOk;
}

// --- stats --------------------------------------------------------------------

int cmd_stats(const Invocation& inv, std::ostream& out) {
  std::vector<std::string> paths = inv.report_paths;
  if (paths.empty() && !inv.config.corpus.input.empty()) paths.push_back(inv.config.corpus.input);
  std::vector<ConstructionReport> shards;
  for (const auto& p : paths) {
    json j = json::parse(load_text_file(p), nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ValidationError("'" + p + "' is not a JSON object");
    // Accept either a bare report or a manifest carrying one.
    shards.push_back(ConstructionReport::from_json(j.contains("report") ? j["report"] : j));
  }
  const auto total = yield_stats(shards);
  const json summary = total.to_json();
  if (!inv.config.corpus.output.empty()) {
    write_text(inv.config.corpus.output, summary.dump(2) + "\n");
    Manifest m(inv, nullptr);
    for (const auto& p : paths) m.input(p);
    m.output(inv.config.corpus.output);
    m.body["report"] = summary;
    m.write(inv.config.corpus.output);
  }
  out << summary.dump() << "\n";
  return kExitOk;
}

// --- instability-report -------------------------------------------------------

int cmd_instability(const Invocation& inv, std::ostream& out) {
  const auto& c = inv.config;
  const fs::path input = require_input(c);
  auto gateway = open_gateway(c);
  gateway->require(Capability::score);
  const auto ingested = ingest(input, c.corpus.max_tokens, token_counter_for(gateway.get()));
  const auto report = instability_report(ingested.samples, *gateway, c.instability_threshold);
  const json j = report.to_json();
  if (c.corpus.output.empty()) {
    out << j.dump(2) << "\n";
  } else {
    write_text(c.corpus.output, j.dump(2) + "\n");
    Manifest m(inv, gateway.get());
    m.input(input);
    m.output(c.corpus.output);
    m.body["ingest"] = ingested.report.to_json();
    m.body["report"] = j["summary"];
    m.write(c.corpus.output);
    out << j["summary"].dump() << "\n";
  }
  return kExitOk;
}

// --- plumbing -----------------------------------------------------------------

void collect_leaves(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : node.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (name == "gateway.endpoints") continue;
    if (value.is_object()) {
      collect_leaves(value, name, out);
    } else {
      out.push_back(name);
    }
  }
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return kExitIo;
    case ErrorKind::transport:
    case ErrorKind::backend:
    case ErrorKind::protocol: return kExitBackend;
    default: return kExitConfig;
  }
}

void report_error(std::ostream& err, std::string_view kind, std::string_view message) {
  err << json{{"error", kind}, {"message", message}}.dump() << "\n";
}

struct Flags {
  std::string config_path;
  std::map<std::string, std::string> shortcut;  // flag-provided values keyed by dotted name
  std::map<std::string, std::string> dotted;
  std::vector<std::string> reports;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Task-consistent rewriting of expert demonstrations", "rewriter"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  const json defaults = RunConfig::defaults_json();
  std::vector<std::string> leaves;
  collect_leaves(defaults, "", leaves);

  struct Sub {
    const char* name;
    const char* help;
    std::function<int(const Invocation&, std::ostream&)> run;
  };
  const std::vector<Sub> subs = {
      {"verify", "Apply the task-consistency gate to (input, target, candidate) records", cmd_verify},
      {"score", "Compute per-candidate rewards for candidate groups", cmd_score},
      {"train-agent", "Train the toy rewriting policy on the synthetic task", cmd_train_agent},
      {"build-dataset", "Generate, verify and fall back to build the rewritten dataset", cmd_build_dataset},
      {"stats", "Aggregate construction reports", cmd_stats},
      {"instability-report", "Score expert demonstrations and report implied weights", cmd_instability},
  };

  std::vector<Flags> flags(subs.size());
  std::vector<CLI::App*> apps;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* sub = app.add_subcommand(subs[i].name, subs[i].help);
    auto& f = flags[i];
    sub->add_option("--config", f.config_path, "JSON config file")->check(CLI::ExistingFile);
    const std::pair<const char*, const char*> shortcuts[] = {
        {"--gateway", "gateway.url"},      {"--input", "corpus.input"},
        {"--output", "corpus.output"},     {"--max-tokens", "corpus.max_tokens"},
        {"--split-fraction", "corpus.split_fraction"}, {"--seed", "seed"},
    };
    for (const auto& [flag, key] : shortcuts) {
      sub->add_option(flag, f.shortcut[key], std::string("Sets ") + key);
    }
    for (const auto& leaf : leaves) {
      if (leaf != "seed") sub->add_option("--" + leaf, f.dotted[leaf]);
    }
    if (std::string(subs[i].name) == "stats") {
      sub->add_option("reports", f.reports, "Construction reports or manifests");
    }
    apps.push_back(sub);
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", e.what());
    return kExitConfig;
  }

  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto* sub = apps[i];
    if (!sub->parsed()) continue;
    const auto& f = flags[i];
    try {
      Invocation inv;
      inv.command = subs[i].name;
      inv.resolved = defaults;
      if (!f.config_path.empty()) {
        json file = json::parse(load_text_file(f.config_path), nullptr, false);
        if (file.is_discarded()) throw ConfigError("config file '" + f.config_path + "' is not valid JSON");
        merge_config(inv.resolved, file);
      }
      for (const auto& [key, value] : f.dotted) {
        if (key != "seed" && sub->count("--" + key) > 0) set_dotted(inv.resolved, key, value);
      }
      const std::pair<const char*, const char*> shortcuts[] = {
          {"--gateway", "gateway.url"},      {"--input", "corpus.input"},
          {"--output", "corpus.output"},     {"--max-tokens", "corpus.max_tokens"},
          {"--split-fraction", "corpus.split_fraction"}, {"--seed", "seed"},
      };
      for (const auto& [flag, key] : shortcuts) {
        if (sub->count(flag) > 0) set_dotted(inv.resolved, key, f.shortcut.at(key));
      }
      inv.config = RunConfig::from_json(inv.resolved);
      inv.resolved = inv.config.to_json();
      inv.report_paths = f.reports;
      return subs[i].run(inv, out);
    } catch (const Error& e) {
      report_error(err, to_string(e.kind()), e.what());
      return exit_code_for(e.kind());
    } catch (const json::exception& e) {
      report_error(err, "validation", e.what());
      return kExitConfig;
    } catch (const std::exception& e) {
      report_error(err, "internal", e.what());
      return kExitConfig;
    }
  }
  return kExitConfig;
}

}  // namespace rewriter
