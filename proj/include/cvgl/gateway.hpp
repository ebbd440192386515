#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvgl/prompts.hpp"
#include "cvgl/types.hpp"

namespace cvgl {

struct RetryPolicy {
  int max_attempts = 3;  // total attempts, including the first
  std::chrono::milliseconds base_backoff{250};
};

struct BackendConfig {
  std::string endpoint_url;  // e.g. http://host:8000/v1/chat/completions
  std::string model_id;
  std::string auth_env_var;  // env var holding the bearer token; "" = none
  double temperature = 0.0;
  int max_output_tokens = 512;
  int logprob_top_n = 20;
  int max_in_flight = 4;
  std::chrono::milliseconds timeout{30000};
  RetryPolicy retry;
  std::string images_root;            // prefix for relative image refs
  std::optional<int> max_image_dim;   // downscale gate, default off
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;

  bool operator==(const TokenLogprob&) const = default;
};

struct VlmResponse {
  std::string text;
  // Per generated position, the top-N (surface, logprob) alternatives.
  std::vector<std::vector<TokenLogprob>> token_logprobs;
  std::chrono::milliseconds latency{0};
  bool from_cache = false;
};

/// Probability mass per canonical answer label at one token position.
struct TokenDistribution {
  std::map<std::string, double> probs;
  int position = 0;

  double at(const std::string& label) const {
    auto it = probs.find(label);
    return it == probs.end() ? 0.0 : it->second;
  }
};

/// Sums exp(logprob) over the alternatives at the answer position (the first
/// generated token) whose surface, after stripping leading whitespace and
/// lowercasing, equals the lowercased label. Labels never observed map to 0.
/// Throws std::invalid_argument when the response has no token positions.
TokenDistribution extract_token_probs(const VlmResponse& resp,
                                      const std::vector<std::string>& target_labels);

struct ChatTurn {
  std::string role;  // "user" or "assistant"
  MultimodalMessage message;
};

class GatewayError : public std::runtime_error {
 public:
  GatewayError(std::string message, int http_status = 0)
      : std::runtime_error(std::move(message)), http_status_(http_status) {}
  int http_status() const { return http_status_; }

 private:
  int http_status_;
};

struct GatewayStats {
  std::atomic<std::int64_t> http_requests{0};
  std::atomic<std::int64_t> retries{0};
  std::atomic<std::int64_t> cache_hits{0};
  std::atomic<std::int64_t> cache_misses{0};
};

/// Client for OpenAI-compatible chat-completion servers with image inputs
/// and per-token top logprobs. Shareable across worker threads; at most
/// cfg.max_in_flight requests are outstanding at once.
class VlmGateway {
 public:
  /// cache_dir empty disables the response cache.
  explicit VlmGateway(BackendConfig cfg, std::filesystem::path cache_dir = {});
  ~VlmGateway();

  VlmGateway(const VlmGateway&) = delete;
  VlmGateway& operator=(const VlmGateway&) = delete;

  /// Single user turn, always over HTTP (no cache consult).
  VlmResponse complete(const MultimodalMessage& message, bool want_logprobs);
  VlmResponse complete(const std::vector<ChatTurn>& turns, bool want_logprobs);

  /// Cache-first variant; on a miss performs the HTTP call and stores the
  /// response atomically. Falls back to complete() when no cache_dir is set.
  VlmResponse cached_complete(const MultimodalMessage& message, bool want_logprobs);
  VlmResponse cached_complete(const std::vector<ChatTurn>& turns, bool want_logprobs);

  /// Content-addressed key: hash over model id, decode parameters, the full
  /// conversation text, and a content hash of every image payload.
  std::string cache_key(const std::vector<ChatTurn>& turns, bool want_logprobs) const;

  const BackendConfig& config() const { return cfg_; }
  const GatewayStats& stats() const { return stats_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  BackendConfig cfg_;
  std::filesystem::path cache_dir_;
  GatewayStats stats_;
};

/// Resolves an image ref against images_root and loads its bytes, applying
/// the config-gated max-dimension downscale when enabled. Returns the payload
/// and its media type.
struct ImagePayload {
  std::string bytes;
  std::string media_type;
};
ImagePayload load_image_payload(const std::string& image_ref, const BackendConfig& cfg);

/// Media type from a file extension; application/octet-stream when unknown.
std::string media_type_for(const std::filesystem::path& path);

/// Decodes, shrinks so max(width, height) <= max_dim (keeping aspect), and
/// re-encodes. No-op when already small enough or the payload cannot be
/// decoded as an image.
std::string downscale_image(const std::string& bytes, const std::string& media_type,
                            int max_dim);

}  // namespace cvgl
