#include "rewriter/gateway.hpp"

#include <chrono>
#include <cctype>
#include <cmath>
#include <thread>

#include "rewriter/error.hpp"
#include "rewriter/http_gateway.hpp"
#include "rewriter/mock_gateway.hpp"

namespace rewriter {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::validation: return "validation";
    case ErrorKind::io: return "io";
    case ErrorKind::capability: return "capability";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::transport: return "transport";
    case ErrorKind::backend: return "backend";
    case ErrorKind::domain: return "domain";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::assembly: return "assembly";
  }
  return "unknown";
}

std::string_view to_string(Capability capability) {
  switch (capability) {
    case Capability::generate: return "generate";
    case Capability::score: return "score";
    case Capability::embed: return "embed";
    case Capability::judge: return "judge";
    case Capability::tokenize: return "tokenize";
  }
  return "unknown";
}

std::optional<Capability> parse_capability(std::string_view name) {
  for (auto c : kAllCapabilities) {
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

double ScoreResult::sequence_logprob() const {
  double total = 0.0;
  for (double lp : logprobs) total += lp;
  return total;
}

void Semaphore::acquire() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return available_ > 0; });
  --available_;
}

void Semaphore::release() {
  {
    std::lock_guard lock(mutex_);
    ++available_;
  }
  cv_.notify_one();
}

namespace {

std::size_t index_of(Capability c) { return static_cast<std::size_t>(c); }

struct SemaphoreGuard {
  explicit SemaphoreGuard(Semaphore& s) : sem(s) { sem.acquire(); }
  ~SemaphoreGuard() { sem.release(); }
  Semaphore& sem;
};

}  // namespace

Gateway::Gateway(CapabilitySet capabilities, std::array<EndpointPolicy, 5> policies)
    : capabilities_(capabilities), policies_(policies) {
  for (std::size_t i = 0; i < policies_.size(); ++i) {
    if (policies_[i].retry.max_attempts < 1) {
      throw ConfigError("gateway max_attempts must be >= 1");
    }
    limits_[i] = std::make_unique<Semaphore>(policies_[i].concurrency);
  }
}

void Gateway::require(Capability c) const {
  if (!supports(c)) {
    throw CapabilityError("gateway has no '" + std::string(to_string(c)) + "' capability");
  }
}

std::size_t Gateway::dispatch_count(Capability c) const {
  return dispatches_[index_of(c)].load();
}

const EndpointPolicy& Gateway::policy(Capability c) const { return policies_[index_of(c)]; }

template <class Fn>
auto Gateway::dispatch(Capability c, Fn&& fn) -> decltype(fn()) {
  require(c);
  const auto& retry = policies_[index_of(c)].retry;
  double backoff = retry.initial_backoff_s;
  std::string last_error;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    if (attempt > 1 && backoff > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= retry.backoff_multiplier;
    }
    try {
      SemaphoreGuard guard(*limits_[index_of(c)]);
      dispatches_[index_of(c)].fetch_add(1);
      return fn();
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  throw BackendError(std::string(to_string(c)) + " failed after " +
                     std::to_string(retry.max_attempts) + " attempt(s): " + last_error);
}

std::vector<std::string> Gateway::generate(const GenerationRequest& request) {
  if (request.n < 1) throw ConfigError("generate: n must be >= 1");
  if (request.max_new_tokens < 1) throw ConfigError("generate: max_new_tokens must be >= 1");
  if (!(request.top_p > 0.0 && request.top_p <= 1.0)) {
    throw ConfigError("generate: top_p must lie in (0, 1]");
  }
  if (!(request.temperature >= 0.0)) throw ConfigError("generate: temperature must be >= 0");
  auto texts = dispatch(Capability::generate, [&] { return do_generate(request); });
  if (texts.size() != static_cast<std::size_t>(request.n)) {
    throw ProtocolError("generate: requested " + std::to_string(request.n) +
                        " completion(s), backend returned " + std::to_string(texts.size()));
  }
  return texts;
}

ScoreResult Gateway::score(const ScoreRequest& request) {
  if (request.completion.empty()) throw ProtocolError("score: empty completion");
  auto result = dispatch(Capability::score, [&] { return do_score(request); });
  if (result.token_count == 0 || result.logprobs.empty()) {
    throw ProtocolError("score: backend reported zero completion tokens");
  }
  if (result.logprobs.size() != result.token_count) {
    throw ProtocolError("score: " + std::to_string(result.logprobs.size()) +
                        " log-probs for " + std::to_string(result.token_count) + " tokens");
  }
  for (double lp : result.logprobs) {
    if (!std::isfinite(lp)) throw ProtocolError("score: non-finite log-probability");
    if (lp > 0.0) throw ProtocolError("score: positive log-probability");
  }
  return result;
}

std::vector<double> Gateway::embed(std::string_view text) {
  auto raw = dispatch(Capability::embed, [&] { return do_embed(text); });
  if (raw.empty()) throw ProtocolError("embed: empty vector");
  std::size_t expected = 0;
  if (!embed_dimension_.compare_exchange_strong(expected, raw.size()) &&
      expected != raw.size()) {
    throw ProtocolError("embed: dimension " + std::to_string(raw.size()) +
                        " differs from earlier dimension " + std::to_string(expected));
  }
  double norm_sq = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) throw ProtocolError("embed: non-finite component");
    norm_sq += v * v;
  }
  if (norm_sq == 0.0) throw ProtocolError("embed: zero-norm vector cannot be normalized");
  const double norm = std::sqrt(norm_sq);
  for (double& v : raw) v /= norm;
  return raw;
}

std::string Gateway::judge(std::string_view prompt) {
  return dispatch(Capability::judge, [&] { return do_judge(prompt); });
}

std::size_t Gateway::tokenize(std::string_view text) {
  return dispatch(Capability::tokenize, [&] { return do_tokenize(text); });
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

std::size_t whitespace_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char ch : text) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_token) ++count;
    in_token = !space;
  }
  return count;
}

EndpointConfig GatewayConfig::resolve(Capability c) const {
  EndpointConfig out{url, model_name, timeout_s, max_attempts, concurrency};
  if (auto it = endpoints.find(c); it != endpoints.end()) {
    const auto& o = it->second;
    if (o.url) out.url = *o.url;
    if (o.model_name) out.model_name = *o.model_name;
    if (o.timeout_s) out.timeout_s = *o.timeout_s;
    if (o.max_attempts) out.max_attempts = *o.max_attempts;
    if (o.concurrency) out.concurrency = *o.concurrency;
  }
  return out;
}

std::unique_ptr<Gateway> make_gateway(const GatewayConfig& config) {
  constexpr std::string_view kMockScheme = "mock:";
  if (config.url.starts_with(kMockScheme)) {
    auto fixture = MockFixture::load(config.url.substr(kMockScheme.size()));
    RetryPolicy retry{config.max_attempts, config.backoff_s, 2.0};
    return std::make_unique<MockGateway>(std::move(fixture), retry, config.concurrency);
  }
  if (config.url.empty()) throw ConfigError("gateway.url is not set");
  return std::make_unique<HttpGateway>(config);
}

}  // namespace rewriter
