#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace rewriter {

enum class Capability : std::uint8_t { generate, score, embed, judge, tokenize };

inline constexpr std::array<Capability, 5> kAllCapabilities = {
    Capability::generate, Capability::score, Capability::embed, Capability::judge,
    Capability::tokenize};

std::string_view to_string(Capability capability);
std::optional<Capability> parse_capability(std::string_view name);

class CapabilitySet {
 public:
  CapabilitySet() = default;
  CapabilitySet(std::initializer_list<Capability> caps) {
    for (auto c : caps) insert(c);
  }
  static CapabilitySet all() {
    CapabilitySet s;
    for (auto c : kAllCapabilities) s.insert(c);
    return s;
  }

  void insert(Capability c) { bits_ |= bit(c); }
  void erase(Capability c) { bits_ &= static_cast<std::uint8_t>(~bit(c)); }
  bool contains(Capability c) const { return (bits_ & bit(c)) != 0; }
  bool operator==(const CapabilitySet&) const = default;

 private:
  static std::uint8_t bit(Capability c) {
    return static_cast<std::uint8_t>(1u << static_cast<unsigned>(c));
  }
  std::uint8_t bits_ = 0;
};

struct GenerationRequest {
  std::string prompt;
  int n = 1;
  int max_new_tokens = 8192;
  double temperature = 0.0;
  double top_p = 1.0;
  std::optional<std::uint64_t> seed;
};

/// Scoring is always under the QA condition: `context` is the bare input x.
struct ScoreRequest {
  std::string context;
  std::string completion;
};

struct ScoreResult {
  std::vector<double> logprobs;  // one per completion token, each <= 0
  std::size_t token_count = 0;

  double sequence_logprob() const;
};

struct RetryPolicy {
  int max_attempts = 3;
  double initial_backoff_s = 0.5;
  double backoff_multiplier = 2.0;
};

struct EndpointPolicy {
  RetryPolicy retry;
  std::size_t concurrency = 4;
};

// Counting semaphore with a runtime limit.
class Semaphore {
 public:
  explicit Semaphore(std::size_t limit) : available_(limit == 0 ? 1 : limit) {}
  void acquire();
  void release();

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t available_;
};

/// Uniform boundary to model services.
///
/// The public entry points validate requests, gate on capabilities, bound
/// in-flight requests, retry transport failures and validate replies. Derived
/// backends implement the `do_*` hooks, which perform a single dispatch each.
/// A hook signals a retryable failure by throwing TransportError.
class Gateway {
 public:
  Gateway(CapabilitySet capabilities, std::array<EndpointPolicy, 5> policies);
  virtual ~Gateway() = default;

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const CapabilitySet& capabilities() const { return capabilities_; }
  bool supports(Capability c) const { return capabilities_.contains(c); }
  void require(Capability c) const;

  std::vector<std::string> generate(const GenerationRequest& request);
  ScoreResult score(const ScoreRequest& request);
  /// Unit-norm embedding; the dimension is fixed for the gateway's lifetime.
  std::vector<double> embed(std::string_view text);
  std::string judge(std::string_view prompt);
  std::size_t tokenize(std::string_view text);

  /// Number of single dispatches (including retried attempts) per capability.
  std::size_t dispatch_count(Capability c) const;
  const EndpointPolicy& policy(Capability c) const;

  /// Machine-readable description of endpoints, recorded in run manifests.
  virtual nlohmann::json describe() const = 0;

 protected:
  virtual std::vector<std::string> do_generate(const GenerationRequest& request) = 0;
  virtual ScoreResult do_score(const ScoreRequest& request) = 0;
  virtual std::vector<double> do_embed(std::string_view text) = 0;
  virtual std::string do_judge(std::string_view prompt) = 0;
  virtual std::size_t do_tokenize(std::string_view text) = 0;

 private:
  template <class Fn>
  auto dispatch(Capability c, Fn&& fn) -> decltype(fn());

  CapabilitySet capabilities_;
  std::array<EndpointPolicy, 5> policies_;
  std::array<std::unique_ptr<Semaphore>, 5> limits_;
  std::array<std::atomic<std::size_t>, 5> dispatches_{};
  std::atomic<std::size_t> embed_dimension_{0};
};

/// Whitespace token count; used when no tokenizer backend is configured.
std::size_t whitespace_token_count(std::string_view text);
std::vector<std::string> whitespace_tokens(std::string_view text);

struct EndpointOverride {
  std::optional<std::string> url;
  std::optional<std::string> model_name;
  std::optional<double> timeout_s;
  std::optional<int> max_attempts;
  std::optional<std::size_t> concurrency;
};

struct EndpointConfig {
  std::string url;
  std::string model_name;
  double timeout_s = 60.0;
  int max_attempts = 3;
  std::size_t concurrency = 4;
};

/// Gateway section of the run configuration. Top-level values apply to every
/// capability unless overridden under `endpoints`.
struct GatewayConfig {
  std::string url;  // "mock:<fixture.json>" or "http(s)://host[:port][/prefix]"
  std::string model_name;
  double timeout_s = 60.0;
  int max_attempts = 3;
  double backoff_s = 0.5;
  std::size_t concurrency = 4;
  std::string api_key_env = "REWRITER_API_KEY";
  std::map<Capability, EndpointOverride> endpoints;

  EndpointConfig resolve(Capability c) const;
};

/// `mock:` selects the in-process mock (fixture path after the colon);
/// anything else selects the HTTP backend.
std::unique_ptr<Gateway> make_gateway(const GatewayConfig& config);

}  // namespace rewriter
