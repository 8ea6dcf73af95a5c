#include "rewriter/mock_gateway.hpp"

#include <cmath>
#include <fstream>

#include "rewriter/error.hpp"

namespace rewriter {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed,
                    std::string_view where) {
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) throw ConfigError("mock fixture: unknown key '" + key + "' in " + std::string(where));
  }
}

Capability capability_or_throw(const std::string& name) {
  auto c = parse_capability(name);
  if (!c) throw ConfigError("mock fixture: unknown capability '" + name + "'");
  return *c;
}

}  // namespace

MockFixture MockFixture::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("mock fixture must be a JSON object");
  reject_unknown(j, {"capabilities", "generate", "judge", "score", "embed", "failures"}, "fixture");
  MockFixture f;
  try {
    if (j.contains("capabilities")) {
      f.capabilities = {};
      for (const auto& name : j.at("capabilities")) {
        f.capabilities.insert(capability_or_throw(name.get<std::string>()));
      }
    } else {
      f.capabilities = {Capability::tokenize};
      for (auto c : kAllCapabilities) {
        if (j.contains(std::string(to_string(c)))) f.capabilities.insert(c);
      }
    }
    if (j.contains("generate")) {
      const auto& g = j.at("generate");
      reject_unknown(g, {"default", "rules"}, "generate");
      if (g.contains("default")) f.generate_default = g.at("default").get<std::string>();
      for (const auto& r : g.value("rules", json::array())) {
        reject_unknown(r, {"contains", "completions"}, "generate rule");
        GenerateRule rule{r.at("contains").get<std::string>(),
                          r.at("completions").get<std::vector<std::string>>()};
        if (rule.completions.empty()) throw ConfigError("mock fixture: generate rule without completions");
        f.generate_rules.push_back(std::move(rule));
      }
    }
    if (j.contains("judge")) {
      const auto& g = j.at("judge");
      reject_unknown(g, {"default", "rules"}, "judge");
      f.judge_default = g.value("default", f.judge_default);
      for (const auto& r : g.value("rules", json::array())) {
        reject_unknown(r, {"contains", "reply"}, "judge rule");
        f.judge_rules.push_back({r.at("contains").get<std::string>(), r.at("reply").get<std::string>()});
      }
    }
    if (j.contains("score")) {
      const auto& s = j.at("score");
      reject_unknown(s, {"uniform_vocab_size", "entries", "token_logprobs", "default_logprob"}, "score");
      if (s.contains("uniform_vocab_size")) {
        f.uniform_vocab_size = s.at("uniform_vocab_size").get<std::size_t>();
        if (*f.uniform_vocab_size < 1) throw ConfigError("mock fixture: uniform_vocab_size must be >= 1");
      }
      for (const auto& e : s.value("entries", json::array())) {
        reject_unknown(e, {"context", "completion", "logprobs"}, "score entry");
        f.score_entries.push_back({e.at("context").get<std::string>(),
                                   e.at("completion").get<std::string>(),
                                   e.at("logprobs").get<std::vector<double>>()});
      }
      if (s.contains("token_logprobs")) {
        f.token_logprobs = s.at("token_logprobs").get<std::map<std::string, double>>();
      }
      f.default_logprob = s.value("default_logprob", f.default_logprob);
    }
    if (j.contains("embed")) {
      const auto& e = j.at("embed");
      reject_unknown(e, {"dimension", "vocabulary"}, "embed");
      f.embed_dimension = e.value("dimension", f.embed_dimension);
      f.embed_vocabulary = e.value("vocabulary", std::vector<std::string>{});
      if (f.embed_dimension == 0) throw ConfigError("mock fixture: embed dimension must be >= 1");
      if (f.embed_vocabulary.size() > f.embed_dimension) {
        throw ConfigError("mock fixture: embed vocabulary larger than dimension");
      }
    }
    if (j.contains("failures")) {
      for (const auto& [name, count] : j.at("failures").items()) {
        f.failures[capability_or_throw(name)] = count.get<int>();
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mock fixture: ") + e.what());
  }
  return f;
}

MockFixture MockFixture::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mock fixture '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("mock fixture '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

namespace {

std::array<EndpointPolicy, 5> uniform_policies(RetryPolicy retry, std::size_t concurrency) {
  std::array<EndpointPolicy, 5> p;
  p.fill(EndpointPolicy{retry, concurrency});
  return p;
}

}  // namespace

MockGateway::MockGateway(MockFixture fixture, RetryPolicy retry, std::size_t concurrency)
    : Gateway(fixture.capabilities, uniform_policies(retry, concurrency)),
      fixture_(std::move(fixture)) {}

json MockGateway::describe() const {
  json caps = json::array();
  for (auto c : kAllCapabilities) {
    if (supports(c)) caps.push_back(std::string(to_string(c)));
  }
  return {{"backend", "mock"}, {"capabilities", caps}};
}

void MockGateway::maybe_fail(Capability c) {
  auto it = fixture_.failures.find(c);
  if (it == fixture_.failures.end() || it->second == 0) return;
  std::lock_guard lock(failure_mutex_);
  int& seen = failures_seen_[c];
  if (it->second < 0 || seen < it->second) {
    ++seen;
    throw TransportError("mock: injected " + std::string(to_string(c)) + " failure");
  }
}

std::vector<std::string> MockGateway::do_generate(const GenerationRequest& request) {
  maybe_fail(Capability::generate);
  const std::vector<std::string>* pool = nullptr;
  for (const auto& rule : fixture_.generate_rules) {
    if (request.prompt.find(rule.contains) != std::string::npos) {
      pool = &rule.completions;
      break;
    }
  }
  std::vector<std::string> fallback;
  if (pool == nullptr) {
    if (!fixture_.generate_default) {
      throw ProtocolError("mock: no generate rule matches the prompt and no default is set");
    }
    fallback.push_back(*fixture_.generate_default);
    pool = &fallback;
  }
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(request.n));
  const std::uint64_t prompt_hash = fnv1a64(request.prompt);
  for (int i = 0; i < request.n; ++i) {
    if (request.temperature == 0.0) {
      out.push_back(pool->front());
    } else {
      std::string key = std::to_string(prompt_hash) + ":" +
                        std::to_string(request.seed.value_or(0)) + ":" + std::to_string(i);
      out.push_back((*pool)[fnv1a64(key) % pool->size()]);
    }
  }
  return out;
}

ScoreResult MockGateway::do_score(const ScoreRequest& request) {
  maybe_fail(Capability::score);
  for (const auto& entry : fixture_.score_entries) {
    if (entry.context == request.context && entry.completion == request.completion) {
      return {entry.logprobs, entry.logprobs.size()};
    }
  }
  const auto tokens = whitespace_tokens(request.completion);
  ScoreResult result;
  result.token_count = tokens.size();
  for (const auto& tok : tokens) {
    if (fixture_.uniform_vocab_size) {
      result.logprobs.push_back(-std::log(static_cast<double>(*fixture_.uniform_vocab_size)));
    } else if (auto it = fixture_.token_logprobs.find(tok); it != fixture_.token_logprobs.end()) {
      result.logprobs.push_back(it->second);
    } else {
      result.logprobs.push_back(fixture_.default_logprob);
    }
  }
  return result;
}

std::vector<double> MockGateway::do_embed(std::string_view text) {
  maybe_fail(Capability::embed);
  std::vector<double> counts(fixture_.embed_dimension, 0.0);
  for (const auto& tok : whitespace_tokens(text)) {
    std::size_t index = 0;
    bool found = false;
    for (std::size_t i = 0; i < fixture_.embed_vocabulary.size(); ++i) {
      if (fixture_.embed_vocabulary[i] == tok) {
        index = i;
        found = true;
        break;
      }
    }
    if (!found) index = fnv1a64(tok) % fixture_.embed_dimension;
    counts[index] += 1.0;
  }
  return counts;
}

std::string MockGateway::do_judge(std::string_view prompt) {
  maybe_fail(Capability::judge);
  for (const auto& rule : fixture_.judge_rules) {
    if (prompt.find(rule.contains) != std::string_view::npos) return rule.reply;
  }
  return fixture_.judge_default;
}

std::size_t MockGateway::do_tokenize(std::string_view text) {
  maybe_fail(Capability::tokenize);
  return whitespace_token_count(text);
}

}  // namespace rewriter
