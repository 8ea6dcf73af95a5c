#include "rewriter/http_gateway.hpp"

#include <algorithm>
#include <cstdlib>

#include "httplib.h"
#include "rewriter/error.hpp"

namespace rewriter {

using nlohmann::json;

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("gateway url '" + url + "' has no scheme");
  }
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("gateway url '" + url + "': unsupported scheme '" + scheme + "'");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) {
    out.prefix = url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  return out;
}

std::array<EndpointPolicy, 5> policies_from(const GatewayConfig& config) {
  std::array<EndpointPolicy, 5> p;
  for (auto c : kAllCapabilities) {
    auto ep = config.resolve(c);
    p[static_cast<std::size_t>(c)] =
        EndpointPolicy{RetryPolicy{ep.max_attempts, config.backoff_s, 2.0}, ep.concurrency};
  }
  return p;
}

CapabilitySet capabilities_from(const GatewayConfig& config) {
  CapabilitySet caps;
  for (auto c : kAllCapabilities) {
    if (!config.resolve(c).url.empty()) caps.insert(c);
  }
  return caps;
}

const json& field(const json& j, std::string_view key, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw ProtocolError(std::string(what) + ": response lacks '" + std::string(key) + "'");
  }
  return *it;
}

std::vector<std::string> chat_contents(const json& body, std::string_view what) {
  const auto& choices = field(body, "choices", what);
  if (!choices.is_array()) throw ProtocolError(std::string(what) + ": 'choices' is not an array");
  std::vector<std::pair<std::size_t, std::string>> indexed;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    const auto& choice = choices[i];
    const auto index = choice.value("index", i);
    const auto& message = field(choice, "message", what);
    const auto& content = field(message, "content", what);
    if (!content.is_string()) throw ProtocolError(std::string(what) + ": content is not a string");
    indexed.emplace_back(index, content.get<std::string>());
  }
  std::sort(indexed.begin(), indexed.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::string> out;
  out.reserve(indexed.size());
  for (auto& [_, text] : indexed) out.push_back(std::move(text));
  return out;
}

}  // namespace

HttpGateway::HttpGateway(GatewayConfig config)
    : Gateway(capabilities_from(config), policies_from(config)), config_(std::move(config)) {
  for (auto c : kAllCapabilities) {
    endpoints_[static_cast<std::size_t>(c)] = config_.resolve(c);
    if (supports(c)) parse_url(endpoints_[static_cast<std::size_t>(c)].url);
  }
  if (!config_.api_key_env.empty()) {
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
  }
}

json HttpGateway::describe() const {
  json out = {{"backend", "http"}};
  json eps = json::object();
  for (auto c : kAllCapabilities) {
    if (!supports(c)) continue;
    const auto& ep = endpoints_[static_cast<std::size_t>(c)];
    eps[std::string(to_string(c))] = {{"url", ep.url},
                                      {"model_name", ep.model_name},
                                      {"timeout_s", ep.timeout_s},
                                      {"max_attempts", ep.max_attempts},
                                      {"concurrency", ep.concurrency}};
  }
  out["endpoints"] = std::move(eps);
  return out;
}

json HttpGateway::post(Capability c, const std::string& route, const json& body) {
  const auto& ep = endpoints_[static_cast<std::size_t>(c)];
  const auto url = parse_url(ep.url);
  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(ep.timeout_s);
  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
  client.set_connection_timeout(timeout_us);
  client.set_read_timeout(timeout_us);
  client.set_write_timeout(timeout_us);

  httplib::Headers headers = {
      {"X-Request-Id", std::to_string(next_request_id_.fetch_add(1))}};
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  const std::string what = std::string(to_string(c));
  auto res = client.Post(url.prefix + route, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError(what + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(what + ": HTTP " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError(what + ": HTTP " + std::to_string(res->status) + ": " + res->body);
  }
  try {
    return json::parse(res->body);
  } catch (const json::exception& e) {
    throw ProtocolError(what + ": malformed JSON body: " + e.what());
  }
}

std::vector<std::string> HttpGateway::do_generate(const GenerationRequest& request) {
  const auto& ep = endpoints_[static_cast<std::size_t>(Capability::generate)];
  json body = {{"model", ep.model_name},
               {"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
               {"n", request.n},
               {"max_tokens", request.max_new_tokens},
               {"temperature", request.temperature},
               {"top_p", request.top_p}};
  if (request.seed) body["seed"] = *request.seed;
  return chat_contents(post(Capability::generate, "/v1/chat/completions", body), "generate");
}

std::string HttpGateway::do_judge(std::string_view prompt) {
  const auto& ep = endpoints_[static_cast<std::size_t>(Capability::judge)];
  json body = {{"model", ep.model_name},
               {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
               {"n", 1},
               {"max_tokens", 16},
               {"temperature", 0.0}};
  auto texts = chat_contents(post(Capability::judge, "/v1/chat/completions", body), "judge");
  if (texts.empty()) throw ProtocolError("judge: no choices returned");
  return texts.front();
}

ScoreResult HttpGateway::do_score(const ScoreRequest& request) {
  const auto& ep = endpoints_[static_cast<std::size_t>(Capability::score)];
  json body = {{"model", ep.model_name},
               {"prompt", request.context + request.completion},
               {"max_tokens", 1},
               {"echo", true},
               {"logprobs", 0},
               {"temperature", 0.0}};
  const auto reply = post(Capability::score, "/v1/completions", body);
  const auto& choices = field(reply, "choices", "score");
  if (!choices.is_array() || choices.empty()) throw ProtocolError("score: no choices returned");
  const auto& lp = field(choices[0], "logprobs", "score");
  const auto& token_logprobs = field(lp, "token_logprobs", "score");
  const auto& offsets = field(lp, "text_offset", "score");
  if (!token_logprobs.is_array() || !offsets.is_array() || token_logprobs.size() != offsets.size()) {
    throw ProtocolError("score: token_logprobs and text_offset disagree in length");
  }
  const std::size_t begin = request.context.size();
  const std::size_t end = begin + request.completion.size();
  ScoreResult result;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (!offsets[i].is_number_unsigned()) throw ProtocolError("score: text_offset is not a nonnegative integer");
    const auto offset = offsets[i].get<std::size_t>();
    if (offset < begin || offset >= end) continue;
    if (!token_logprobs[i].is_number()) {
      throw ProtocolError("score: missing log-probability inside the completion span");
    }
    result.logprobs.push_back(token_logprobs[i].get<double>());
  }
  result.token_count = result.logprobs.size();
  return result;
}

std::vector<double> HttpGateway::do_embed(std::string_view text) {
  const auto& ep = endpoints_[static_cast<std::size_t>(Capability::embed)];
  json body = {{"model", ep.model_name}, {"input", std::string(text)}};
  const auto reply = post(Capability::embed, "/v1/embeddings", body);
  const auto& data = field(reply, "data", "embed");
  if (!data.is_array() || data.empty()) throw ProtocolError("embed: no data returned");
  try {
    return field(data[0], "embedding", "embed").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("embed: ") + e.what());
  }
}

std::size_t HttpGateway::do_tokenize(std::string_view text) {
  const auto& ep = endpoints_[static_cast<std::size_t>(Capability::tokenize)];
  json body = {{"model", ep.model_name}, {"prompt", std::string(text)}};
  const auto reply = post(Capability::tokenize, "/tokenize", body);
  const auto& count = field(reply, "count", "tokenize");
  if (!count.is_number_unsigned() && !count.is_number_integer()) {
    throw ProtocolError("tokenize: 'count' is not an integer");
  }
  return count.get<std::size_t>();
}

}  // namespace rewriter
