#pragma once

#include <array>
#include <atomic>
#include <string>

#include "rewriter/gateway.hpp"

namespace rewriter {

/// Gateway over OpenAI-compatible inference servers.
///
/// Routes, relative to each capability's url:
///   generate, judge  POST /v1/chat/completions
///   score            POST /v1/completions   (echo + logprobs, max_tokens 1)
///   embed            POST /v1/embeddings
///   tokenize         POST /tokenize
///
/// Scoring echoes the concatenation context + completion and keeps only the
/// tokens whose text_offset falls inside the completion span.
/// Connection failures, HTTP 429 and 5xx are retryable; other 4xx and
/// malformed bodies are protocol errors.
class HttpGateway final : public Gateway {
 public:
  explicit HttpGateway(GatewayConfig config);

  nlohmann::json describe() const override;

 protected:
  std::vector<std::string> do_generate(const GenerationRequest& request) override;
  ScoreResult do_score(const ScoreRequest& request) override;
  std::vector<double> do_embed(std::string_view text) override;
  std::string do_judge(std::string_view prompt) override;
  std::size_t do_tokenize(std::string_view text) override;

 private:
  nlohmann::json post(Capability c, const std::string& route, const nlohmann::json& body);

  GatewayConfig config_;
  std::array<EndpointConfig, 5> endpoints_;
  std::string api_key_;
  std::atomic<std::uint64_t> next_request_id_{1};
};

}  // namespace rewriter
