#include "rewriter/config.hpp"

#include <cstdio>

#include "rewriter/error.hpp"
#include "rewriter/mock_gateway.hpp"

namespace rewriter {

using nlohmann::json;

json RunConfig::defaults_json() { return RunConfig{}.to_json(); }

json RunConfig::to_json() const {
  json endpoints = json::object();
  for (const auto& [cap, o] : gateway.endpoints) {
    json e = json::object();
    if (o.url) e["url"] = *o.url;
    if (o.model_name) e["model_name"] = *o.model_name;
    if (o.timeout_s) e["timeout_s"] = *o.timeout_s;
    if (o.max_attempts) e["max_attempts"] = *o.max_attempts;
    if (o.concurrency) e["concurrency"] = *o.concurrency;
    endpoints[std::string(to_string(cap))] = std::move(e);
  }
  return {
      {"seed", seed},
      {"corpus",
       {{"input", corpus.input},
        {"output", corpus.output},
        {"max_tokens", corpus.max_tokens},
        {"split_fraction", corpus.split_fraction ? json(*corpus.split_fraction) : json(nullptr)}}},
      {"reward",
       {{"lambda_dist", reward.lambda_dist},
        {"lambda_div", reward.lambda_div},
        {"epsilon", reward.epsilon},
        {"gating_mode", to_string(reward.mode)},
        {"K", reward.group_size}}},
      {"stage1",
       {{"steps", stage1.steps},
        {"batch_groups", stage1.batch_groups},
        {"learning_rate", stage1.learning_rate},
        {"advantage_epsilon", stage1.advantage_epsilon},
        {"vocab_size", stage1.vocab_size},
        {"context_order", stage1.context_order},
        {"length_cap", stage1.length_cap},
        {"temperature", stage1.temperature},
        {"init_scale", stage1.init_scale},
        {"num_tasks", stage1.num_tasks}}},
      {"stage2",
       {{"mode", to_string(stage2.mode)},
        {"prompt_path", stage2.prompt_path},
        {"judge_prompt_path", stage2.judge_prompt_path},
        {"temperature", stage2.temperature},
        {"top_p", stage2.top_p},
        {"max_new_tokens", stage2.max_new_tokens},
        {"attempts", stage2.attempts},
        {"concurrency", stage2.concurrency}}},
      {"gateway",
       {{"url", gateway.url},
        {"model_name", gateway.model_name},
        {"timeout_s", gateway.timeout_s},
        {"max_attempts", gateway.max_attempts},
        {"backoff_s", gateway.backoff_s},
        {"concurrency", gateway.concurrency},
        {"api_key_env", gateway.api_key_env},
        {"endpoints", std::move(endpoints)}}},
      {"instability", {{"threshold", instability_threshold}}},
  };
}

namespace {

template <class T>
T get_as(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key ") + section + "." + key + " has the wrong type");
  }
}

std::size_t get_count(const json& j, const char* section, const char* key) {
  const auto& v = j.at(section).at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(std::string("config key ") + section + "." + key +
                      " must be a nonnegative integer");
  }
  return v.get<std::size_t>();
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

}  // namespace

void merge_config(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (path == "gateway.endpoints") {
      if (!parse_capability(key)) throw ConfigError("unknown capability '" + key + "' in gateway.endpoints");
      if (!value.is_object()) throw ConfigError("gateway.endpoints." + key + " must be an object");
      for (const auto& [ek, ev] : value.items()) {
        if (ek != "url" && ek != "model_name" && ek != "timeout_s" && ek != "max_attempts" &&
            ek != "concurrency") {
          throw ConfigError("unknown config key '" + full + "." + ek + "'");
        }
        base[key][ek] = ev;
      }
      continue;
    }
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, full);
    } else if (slot.is_null() || value.is_null() || same_kind(slot, value)) {
      slot = value;
    } else {
      throw ConfigError("config key '" + full + "' has the wrong type");
    }
  }
}

void set_dotted(json& config, std::string_view dotted_key, const std::string& text) {
  json* node = &config;
  json overlay = json::object();
  json* out = &overlay;
  std::size_t start = 0;
  std::string key(dotted_key);
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      const json* current = node->contains(part) ? &(*node)[part] : nullptr;
      json value;
      if (current && current->is_string()) {
        value = text;
      } else {
        value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
      }
      (*out)[part] = value;
      break;
    }
    if (node->contains(part)) node = &(*node)[part];
    out = &(*out)[part];
    start = dot + 1;
  }
  merge_config(config, overlay);
}

RunConfig RunConfig::from_json(const json& input) {
  json j = defaults_json();
  merge_config(j, input);

  RunConfig c;
  if (!j.at("seed").is_number_integer() || j.at("seed").get<long long>() < 0) {
    throw ConfigError("seed must be a nonnegative integer");
  }
  c.seed = j.at("seed").get<std::uint64_t>();

  c.corpus.input = get_as<std::string>(j, "corpus", "input");
  c.corpus.output = get_as<std::string>(j, "corpus", "output");
  c.corpus.max_tokens = get_count(j, "corpus", "max_tokens");
  if (c.corpus.max_tokens == 0) throw ConfigError("corpus.max_tokens must be positive");
  if (!j["corpus"]["split_fraction"].is_null()) {
    const double f = get_as<double>(j, "corpus", "split_fraction");
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("corpus.split_fraction must lie in (0, 1)");
    c.corpus.split_fraction = f;
  }

  c.reward.lambda_dist = get_as<double>(j, "reward", "lambda_dist");
  c.reward.lambda_div = get_as<double>(j, "reward", "lambda_div");
  c.reward.epsilon = get_as<double>(j, "reward", "epsilon");
  c.reward.mode = parse_gating_mode(get_as<std::string>(j, "reward", "gating_mode"));
  c.reward.group_size = get_count(j, "reward", "K");
  c.reward.validate();

  c.stage1.steps = get_count(j, "stage1", "steps");
  c.stage1.batch_groups = get_count(j, "stage1", "batch_groups");
  c.stage1.learning_rate = get_as<double>(j, "stage1", "learning_rate");
  c.stage1.advantage_epsilon = get_as<double>(j, "stage1", "advantage_epsilon");
  c.stage1.vocab_size = get_count(j, "stage1", "vocab_size");
  c.stage1.context_order = get_count(j, "stage1", "context_order");
  c.stage1.length_cap = get_count(j, "stage1", "length_cap");
  c.stage1.temperature = get_as<double>(j, "stage1", "temperature");
  c.stage1.init_scale = get_as<double>(j, "stage1", "init_scale");
  c.stage1.num_tasks = get_count(j, "stage1", "num_tasks");
  c.stage1.seed = c.seed;
  c.stage1.reward = c.reward;
  c.stage1.validate();

  c.stage2.mode = parse_construction_mode(get_as<std::string>(j, "stage2", "mode"));
  c.stage2.prompt_path = get_as<std::string>(j, "stage2", "prompt_path");
  c.stage2.judge_prompt_path = get_as<std::string>(j, "stage2", "judge_prompt_path");
  c.stage2.temperature = get_as<double>(j, "stage2", "temperature");
  c.stage2.top_p = get_as<double>(j, "stage2", "top_p");
  c.stage2.max_new_tokens = get_as<int>(j, "stage2", "max_new_tokens");
  c.stage2.attempts = get_count(j, "stage2", "attempts");
  c.stage2.concurrency = get_count(j, "stage2", "concurrency");
  if (c.stage2.attempts < 1) throw ConfigError("stage2.attempts must be >= 1");
  if (c.stage2.max_new_tokens < 1) throw ConfigError("stage2.max_new_tokens must be >= 1");
  if (!(c.stage2.top_p > 0.0 && c.stage2.top_p <= 1.0)) throw ConfigError("stage2.top_p must lie in (0, 1]");
  if (!(c.stage2.temperature >= 0.0)) throw ConfigError("stage2.temperature must be >= 0");

  c.gateway.url = get_as<std::string>(j, "gateway", "url");
  c.gateway.model_name = get_as<std::string>(j, "gateway", "model_name");
  c.gateway.timeout_s = get_as<double>(j, "gateway", "timeout_s");
  c.gateway.max_attempts = get_as<int>(j, "gateway", "max_attempts");
  c.gateway.backoff_s = get_as<double>(j, "gateway", "backoff_s");
  c.gateway.concurrency = get_count(j, "gateway", "concurrency");
  c.gateway.api_key_env = get_as<std::string>(j, "gateway", "api_key_env");
  if (c.gateway.max_attempts < 1) throw ConfigError("gateway.max_attempts must be >= 1");
  if (!(c.gateway.backoff_s >= 0.0)) throw ConfigError("gateway.backoff_s must be >= 0");
  if (!(c.gateway.timeout_s > 0.0)) throw ConfigError("gateway.timeout_s must be positive");
  try {
    for (const auto& [name, e] : j.at("gateway").at("endpoints").items()) {
      EndpointOverride o;
      if (e.contains("url")) o.url = e["url"].get<std::string>();
      if (e.contains("model_name")) o.model_name = e["model_name"].get<std::string>();
      if (e.contains("timeout_s")) o.timeout_s = e["timeout_s"].get<double>();
      if (e.contains("max_attempts")) o.max_attempts = e["max_attempts"].get<int>();
      if (e.contains("concurrency")) o.concurrency = e["concurrency"].get<std::size_t>();
      c.gateway.endpoints[*parse_capability(name)] = o;
    }
  } catch (const json::exception&) {
    throw ConfigError("gateway.endpoints has a mistyped value");
  }

  c.instability_threshold = get_as<double>(j, "instability", "threshold");
  return c;
}

std::string config_hash(const json& resolved) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(resolved.dump())));
  return buf;
}

}  // namespace rewriter
