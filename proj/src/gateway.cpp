#include "cvgl/gateway.hpp"

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <random>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cvgl/dataio.hpp"
#include "cvgl/digest.hpp"

namespace cvgl {

using nlohmann::json;

namespace {

std::string normalize_surface(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  std::string out(s.substr(i));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Splits a full endpoint URL into (scheme://host[:port], path).
std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw GatewayError("endpoint URL must include a scheme: " + url);
  }
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/v1/chat/completions"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string media_type_for(const std::filesystem::path& path) {
  std::string ext = lower(path.extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

std::string downscale_image(const std::string& bytes, const std::string& media_type,
                            int max_dim) {
  std::vector<unsigned char> buf(bytes.begin(), bytes.end());
  cv::Mat img = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (img.empty()) return bytes;  // not decodable; pass through
  int longest = std::max(img.cols, img.rows);
  if (longest <= max_dim) return bytes;
  double scale = static_cast<double>(max_dim) / longest;
  cv::Mat small;
  cv::resize(img, small, cv::Size(), scale, scale, cv::INTER_AREA);
  std::string ext = media_type == "image/jpeg" ? ".jpg" : ".png";
  std::vector<unsigned char> out;
  if (!cv::imencode(ext, small, out)) return bytes;
  return std::string(out.begin(), out.end());
}

ImagePayload load_image_payload(const std::string& image_ref,
                                const BackendConfig& cfg) {
  namespace fs = std::filesystem;
  fs::path p(image_ref);
  if (p.is_relative() && !cfg.images_root.empty()) {
    p = fs::path(cfg.images_root) / p;
  }
  ImagePayload payload;
  payload.media_type = media_type_for(p);
  try {
    payload.bytes = read_file(p);
  } catch (const std::runtime_error& e) {
    throw GatewayError(std::string("unresolvable image reference: ") + e.what());
  }
  if (cfg.max_image_dim && payload.media_type != "application/octet-stream") {
    payload.bytes = downscale_image(payload.bytes, payload.media_type,
                                    *cfg.max_image_dim);
  }
  return payload;
}

TokenDistribution extract_token_probs(const VlmResponse& resp,
                                      const std::vector<std::string>& target_labels) {
  if (resp.token_logprobs.empty()) {
    throw std::invalid_argument("response carries no token logprobs");
  }
  TokenDistribution dist;
  dist.position = 0;
  for (const std::string& label : target_labels) dist.probs[label] = 0.0;
  const auto& alternatives = resp.token_logprobs.front();
  for (const TokenLogprob& alt : alternatives) {
    std::string surface = normalize_surface(alt.token);
    for (const std::string& label : target_labels) {
      if (surface == lower(label)) {
        dist.probs[label] += std::min(1.0, std::exp(alt.logprob));
      }
    }
  }
  return dist;
}

struct VlmGateway::Impl {
  std::counting_semaphore<1 << 20> in_flight;
  std::mutex cache_write_mutex;

  explicit Impl(int max_in_flight) : in_flight(max_in_flight) {}
};

VlmGateway::VlmGateway(BackendConfig cfg, std::filesystem::path cache_dir)
    : impl_(std::make_unique<Impl>(std::max(1, cfg.max_in_flight))),
      cfg_(std::move(cfg)),
      cache_dir_(std::move(cache_dir)) {
  if (!cache_dir_.empty()) std::filesystem::create_directories(cache_dir_);
}

VlmGateway::~VlmGateway() = default;

VlmResponse VlmGateway::complete(const MultimodalMessage& message,
                                 bool want_logprobs) {
  return complete(std::vector<ChatTurn>{{"user", message}}, want_logprobs);
}

VlmResponse VlmGateway::cached_complete(const MultimodalMessage& message,
                                        bool want_logprobs) {
  return cached_complete(std::vector<ChatTurn>{{"user", message}}, want_logprobs);
}

std::string VlmGateway::cache_key(const std::vector<ChatTurn>& turns,
                                  bool want_logprobs) const {
  std::string material;
  material += cfg_.model_id;
  material += '\x1f';
  material += fmt_double(cfg_.temperature);
  material += '\x1f';
  material += std::to_string(cfg_.max_output_tokens);
  material += '\x1f';
  material += std::to_string(cfg_.logprob_top_n);
  material += '\x1f';
  material += want_logprobs ? '1' : '0';
  for (const ChatTurn& turn : turns) {
    material += '\x1e';
    material += turn.role;
    for (const MessagePart& part : turn.message.parts) {
      material += '\x1f';
      if (part.kind == MessagePart::Kind::text) {
        material += "t:";
        material += part.text;
      } else {
        ImagePayload payload = load_image_payload(part.image_ref, cfg_);
        material += "i:";
        material += sha256_hex(payload.bytes);
      }
    }
  }
  return sha256_hex(material);
}

namespace {

json message_to_content(const MultimodalMessage& message, const BackendConfig& cfg) {
  json content = json::array();
  for (const MessagePart& part : message.parts) {
    if (part.kind == MessagePart::Kind::text) {
      content.push_back({{"type", "text"}, {"text", part.text}});
    } else {
      ImagePayload payload = load_image_payload(part.image_ref, cfg);
      std::string data_uri =
          "data:" + payload.media_type + ";base64," + base64_encode(payload.bytes);
      content.push_back(
          {{"type", "image_url"}, {"image_url", {{"url", data_uri}}}});
    }
  }
  return content;
}

VlmResponse parse_completion(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) {
    throw GatewayError("malformed response: invalid JSON: " + body.substr(0, 200));
  }
  VlmResponse resp;
  try {
    const json& choice = j.at("choices").at(0);
    const json& content = choice.at("message").at("content");
    resp.text = content.is_null() ? "" : content.get<std::string>();
    if (choice.contains("logprobs") && !choice["logprobs"].is_null()) {
      const json& tokens = choice["logprobs"].at("content");
      for (const json& tok : tokens) {
        std::vector<TokenLogprob> alts;
        if (tok.contains("top_logprobs") && tok["top_logprobs"].is_array() &&
            !tok["top_logprobs"].empty()) {
          for (const json& alt : tok["top_logprobs"]) {
            alts.push_back({alt.at("token").get<std::string>(),
                            alt.at("logprob").get<double>()});
          }
        } else {
          alts.push_back({tok.at("token").get<std::string>(),
                          tok.at("logprob").get<double>()});
        }
        resp.token_logprobs.push_back(std::move(alts));
      }
    }
  } catch (const json::exception& e) {
    throw GatewayError(std::string("malformed response: ") + e.what() + ": " +
                       body.substr(0, 200));
  }
  return resp;
}

json response_to_cache_entry(const VlmResponse& resp) {
  json positions = json::array();
  for (const auto& alts : resp.token_logprobs) {
    json pos = json::array();
    for (const TokenLogprob& alt : alts) {
      pos.push_back({{"token", alt.token}, {"logprob", alt.logprob}});
    }
    positions.push_back(std::move(pos));
  }
  return {{"text", resp.text}, {"token_logprobs", std::move(positions)}};
}

std::optional<VlmResponse> cache_entry_to_response(const std::string& bytes) {
  json j = json::parse(bytes, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  VlmResponse resp;
  try {
    resp.text = j.at("text").get<std::string>();
    for (const json& pos : j.at("token_logprobs")) {
      std::vector<TokenLogprob> alts;
      for (const json& alt : pos) {
        alts.push_back({alt.at("token").get<std::string>(),
                        alt.at("logprob").get<double>()});
      }
      resp.token_logprobs.push_back(std::move(alts));
    }
  } catch (const json::exception&) {
    return std::nullopt;
  }
  resp.from_cache = true;
  return resp;
}

}  // namespace

VlmResponse VlmGateway::complete(const std::vector<ChatTurn>& turns,
                                 bool want_logprobs) {
  if (cfg_.endpoint_url.empty()) throw GatewayError("no endpoint configured");
  if (cfg_.model_id.empty()) throw GatewayError("no model id configured");

  json body;
  body["model"] = cfg_.model_id;
  json messages = json::array();
  for (const ChatTurn& turn : turns) {
    // Text-only assistant turns carry plain string content for compatibility.
    bool text_only = std::all_of(
        turn.message.parts.begin(), turn.message.parts.end(),
        [](const MessagePart& p) { return p.kind == MessagePart::Kind::text; });
    if (turn.role != "user" && text_only) {
      messages.push_back({{"role", turn.role}, {"content", turn.message.text_only()}});
    } else {
      messages.push_back(
          {{"role", turn.role}, {"content", message_to_content(turn.message, cfg_)}});
    }
  }
  body["messages"] = std::move(messages);
  body["temperature"] = cfg_.temperature;
  body["max_tokens"] = cfg_.max_output_tokens;
  if (want_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = cfg_.logprob_top_n;
  }
  std::string payload = body.dump();

  auto [base, path] = split_endpoint(cfg_.endpoint_url);
  httplib::Headers headers;
  if (!cfg_.auth_env_var.empty()) {
    if (const char* token = std::getenv(cfg_.auth_env_var.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + token);
    }
  }

  impl_->in_flight.acquire();
  struct Release {
    std::counting_semaphore<1 << 20>& sem;
    ~Release() { sem.release(); }
  } release{impl_->in_flight};

  auto started = std::chrono::steady_clock::now();
  std::string last_error;
  int last_status = 0;
  for (int attempt = 1; attempt <= std::max(1, cfg_.retry.max_attempts); ++attempt) {
    if (attempt > 1) {
      stats_.retries.fetch_add(1, std::memory_order_relaxed);
      auto backoff = cfg_.retry.base_backoff * (1LL << (attempt - 2));
      std::this_thread::sleep_for(backoff);
    }
    httplib::Client client(base);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(
                                      cfg_.timeout).count(),
                                  (cfg_.timeout.count() % 1000) * 1000);
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(
                                cfg_.timeout).count(),
                            (cfg_.timeout.count() % 1000) * 1000);
    stats_.http_requests.fetch_add(1, std::memory_order_relaxed);
    httplib::Result res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;  // retryable
    }
    last_status = res->status;
    if (res->status == 200) {
      VlmResponse resp = parse_completion(res->body);
      if (want_logprobs && resp.token_logprobs.empty()) {
        throw GatewayError("logprobs requested but absent from server reply");
      }
      resp.latency = std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::steady_clock::now() - started);
      return resp;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;  // retryable
    }
    throw GatewayError("HTTP " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 500),
                       res->status);
  }
  throw GatewayError("request failed after " +
                         std::to_string(std::max(1, cfg_.retry.max_attempts)) +
                         " attempts: " + last_error,
                     last_status);
}

VlmResponse VlmGateway::cached_complete(const std::vector<ChatTurn>& turns,
                                        bool want_logprobs) {
  if (cache_dir_.empty()) return complete(turns, want_logprobs);

  std::string key = cache_key(turns, want_logprobs);
  std::filesystem::path entry = cache_dir_ / (key + ".json");

  std::error_code ec;
  if (std::filesystem::exists(entry, ec)) {
    std::optional<VlmResponse> cached;
    try {
      cached = cache_entry_to_response(read_file(entry));
    } catch (const std::runtime_error&) {
      cached = std::nullopt;
    }
    if (cached) {
      stats_.cache_hits.fetch_add(1, std::memory_order_relaxed);
      return *cached;
    }
    std::cerr << "warning: discarding corrupt cache entry " << entry << "\n";
    std::filesystem::remove(entry, ec);
  }

  stats_.cache_misses.fetch_add(1, std::memory_order_relaxed);
  VlmResponse resp = complete(turns, want_logprobs);

  // Single writer per entry; readers only ever see complete files because the
  // temp file is renamed into place.
  std::lock_guard<std::mutex> lock(impl_->cache_write_mutex);
  atomic_write_file(entry, response_to_cache_entry(resp).dump());
  return resp;
}

}  // namespace cvgl
