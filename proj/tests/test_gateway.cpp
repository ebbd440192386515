#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <opencv2/imgcodecs.hpp>

#include "cvgl/dataio.hpp"
#include "cvgl/digest.hpp"
#include "cvgl/gateway.hpp"
#include "stub_vlm_server.hpp"

using namespace cvgl;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  static int counter = 0;
  fs::path dir = fs::temp_directory_path() /
                 ("cvgl_gateway_" + std::to_string(::getpid()) + "_" +
                  std::to_string(counter++) + "_" + name);
  fs::create_directories(dir);
  return dir;
}

fs::path write_image(const fs::path& dir, const std::string& name,
                     const std::string& content) {
  fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << content;
  return p;
}

BackendConfig stub_config(const testing::StubVlmServer& stub) {
  BackendConfig cfg;
  cfg.endpoint_url = stub.endpoint();
  cfg.model_id = "stub-vlm";
  cfg.retry.max_attempts = 3;
  cfg.retry.base_backoff = std::chrono::milliseconds(5);
  cfg.timeout = std::chrono::milliseconds(5000);
  return cfg;
}

MultimodalMessage plain_message(std::initializer_list<MessagePart> parts) {
  MultimodalMessage msg;
  msg.parts = parts;
  return msg;
}

MessagePart text_part(const std::string& text) {
  return {MessagePart::Kind::text, text, "", ""};
}
MessagePart image_part(const std::string& ref) {
  return {MessagePart::Kind::image, "", ref, "<IMG>"};
}

VlmResponse response_with_alts(std::vector<TokenLogprob> alts) {
  VlmResponse resp;
  resp.text = alts.empty() ? "" : alts.front().token;
  resp.token_logprobs.push_back(std::move(alts));
  return resp;
}

}  // namespace

TEST_CASE("extract_token_probs sums exponentiated logprobs across variants") {
  VlmResponse resp = response_with_alts({{" Yes", std::log(0.7)},
                                         {" No", std::log(0.2)},
                                         {"yes", std::log(0.05)}});
  TokenDistribution dist = extract_token_probs(resp, {"Yes", "No"});
  CHECK(dist.at("Yes") == doctest::Approx(0.75).epsilon(1e-9));
  CHECK(dist.at("No") == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(dist.position == 0);
}

TEST_CASE("extract_token_probs maps unobserved targets to zero") {
  VlmResponse resp = response_with_alts({{" Yes", std::log(0.9)}});
  TokenDistribution dist =
      extract_token_probs(resp, {"1", "2", "3", "4", "5"});
  for (int k = 1; k <= 5; ++k) CHECK(dist.at(std::to_string(k)) == 0.0);
}

TEST_CASE("extract_token_probs handles a single certain alternative") {
  VlmResponse resp = response_with_alts({{"Yes", std::log(1.0)}});
  TokenDistribution dist = extract_token_probs(resp, {"Yes", "No"});
  CHECK(dist.at("Yes") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(dist.at("No") == 0.0);
}

TEST_CASE("extract_token_probs requires token positions") {
  VlmResponse resp;
  resp.text = "Yes";
  CHECK_THROWS_AS(extract_token_probs(resp, {"Yes"}), std::invalid_argument);
}

TEST_CASE("extract_token_probs matches a brute-force recount on random fixtures") {
  std::mt19937_64 rng(20240817);
  std::vector<std::string> surfaces = {" Yes", "Yes", "yes", " YES", " No",
                                       "no",   " 1",  "2",   " 3",  "4",
                                       " 5",   " the", "maybe"};
  const std::vector<std::string> targets = {"Yes", "No", "1", "2", "3", "4", "5"};
  std::uniform_real_distribution<double> mass(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    // A plausible top-N slice: distinct surfaces whose total mass is <= 1.
    std::shuffle(surfaces.begin(), surfaces.end(), rng);
    std::size_t n = 1 + rng() % surfaces.size();
    std::vector<double> weights;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      weights.push_back(mass(rng));
      total += weights.back();
    }
    double scale = mass(rng) / std::max(total, 1e-9);  // shrink below 1
    std::vector<TokenLogprob> alts;
    for (std::size_t i = 0; i < n; ++i) {
      double p = std::max(weights[i] * scale, 1e-12);
      alts.push_back({surfaces[i], std::log(p)});
    }
    VlmResponse resp = response_with_alts(alts);
    TokenDistribution dist = extract_token_probs(resp, targets);

    double sum = 0.0;
    for (const std::string& label : targets) {
      double expected = 0.0;
      for (const TokenLogprob& alt : alts) {
        std::string s = alt.token;
        std::size_t i = 0;
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        s = s.substr(i);
        for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        std::string l = label;
        for (char& c : l) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (s == l) expected += std::exp(alt.logprob);
      }
      CHECK(dist.at(label) == doctest::Approx(expected).epsilon(1e-12));
      CHECK(dist.at(label) >= 0.0);
      CHECK(dist.at(label) <= 1.0);
      sum += dist.at(label);
    }
    CHECK(sum <= 1.0 + 1e-9);
  }
}

TEST_CASE("stub round trip returns the fixed body") {
  testing::StubVlmServer stub;
  fs::path dir = temp_dir("roundtrip");
  fs::path ground = write_image(dir, "g.img", "ground-0");
  fs::path aerial = write_image(dir, "a.img", "aerial-42");

  VlmGateway gateway(stub_config(stub));
  VlmResponse resp = gateway.complete(
      plain_message({text_part("rate this"), image_part(ground.string()),
                     image_part(aerial.string())}),
      false);
  CHECK(resp.text == "Score: 42");
  CHECK_FALSE(resp.from_cache);
  CHECK(stub.request_count() == 1);
  fs::remove_all(dir);
}

TEST_CASE("429 then success costs exactly one retry") {
  testing::StubVlmServer stub;
  stub.fail_next(1, 429);
  VlmGateway gateway(stub_config(stub));
  VlmResponse resp = gateway.complete(plain_message({text_part("hello")}), false);
  CHECK(resp.text == "Score: 0");
  CHECK(stub.request_count() == 2);
  CHECK(gateway.stats().retries.load() == 1);
}

TEST_CASE("4xx responses are not retried") {
  testing::StubVlmServer stub;
  stub.fail_next(5, 400);
  VlmGateway gateway(stub_config(stub));
  CHECK_THROWS_AS(gateway.complete(plain_message({text_part("x")}), false),
                  GatewayError);
  CHECK(stub.request_count() == 1);
}

TEST_CASE("retries exhaust on persistent server errors") {
  testing::StubVlmServer stub;
  stub.fail_next(100, 503);
  BackendConfig cfg = stub_config(stub);
  cfg.retry.max_attempts = 3;
  VlmGateway gateway(cfg);
  CHECK_THROWS_AS(gateway.complete(plain_message({text_part("x")}), false),
                  GatewayError);
  CHECK(stub.request_count() == 3);
}

TEST_CASE("requested-but-missing logprobs are an error") {
  testing::StubVlmServer stub;
  stub.set_suppress_logprobs(true);
  fs::path dir = temp_dir("nologprobs");
  fs::path ground = write_image(dir, "g.img", "ground-0");
  fs::path aerial = write_image(dir, "a.img", "aerial-50");
  VlmGateway gateway(stub_config(stub));
  CHECK_THROWS_AS(
      gateway.complete(plain_message({text_part("match?"), image_part(ground.string()),
                                      image_part(aerial.string())}),
                       true),
      GatewayError);
  fs::remove_all(dir);
}

TEST_CASE("cache hits skip HTTP entirely and round-trip the response") {
  testing::StubVlmServer stub;
  fs::path dir = temp_dir("cache");
  fs::path ground = write_image(dir, "g.img", "ground-0");
  fs::path aerial = write_image(dir, "a.img", "aerial-66");
  VlmGateway gateway(stub_config(stub), dir / "cache");

  MultimodalMessage msg =
      plain_message({text_part("match?"), image_part(ground.string()),
                     image_part(aerial.string())});
  VlmResponse first = gateway.cached_complete(msg, true);
  CHECK_FALSE(first.from_cache);
  int requests_after_first = stub.request_count();

  VlmResponse second = gateway.cached_complete(msg, true);
  CHECK(second.from_cache);
  CHECK(stub.request_count() == requests_after_first);
  CHECK(second.text == first.text);
  CHECK(second.token_logprobs == first.token_logprobs);
  CHECK(gateway.stats().cache_hits.load() == 1);
  fs::remove_all(dir);
}

TEST_CASE("cache keys separate text, parameters, and image content") {
  testing::StubVlmServer stub;
  fs::path dir = temp_dir("keys");
  fs::path img_a = write_image(dir, "a.img", "same-bytes-7");
  fs::path img_b = write_image(dir, "b.img", "same-bytes-7");
  fs::path img_c = write_image(dir, "c.img", "other-bytes-9");
  VlmGateway gateway(stub_config(stub), dir / "cache");

  auto key = [&](const std::string& text, const fs::path& img, bool logprobs) {
    return gateway.cache_key(
        {{"user", plain_message({text_part(text), image_part(img.string())})}},
        logprobs);
  };

  // Same bytes at two paths hash identically; different text or params do not.
  CHECK(key("q", img_a, false) == key("q", img_b, false));
  CHECK(key("q", img_a, false) != key("other q", img_a, false));
  CHECK(key("q", img_a, false) != key("q", img_c, false));
  CHECK(key("q", img_a, false) != key("q", img_a, true));
  fs::remove_all(dir);
}

TEST_CASE("corrupt cache entries are discarded and recomputed") {
  testing::StubVlmServer stub;
  fs::path dir = temp_dir("corrupt");
  fs::path ground = write_image(dir, "g.img", "ground-0");
  fs::path aerial = write_image(dir, "a.img", "aerial-33");
  fs::path cache = dir / "cache";
  VlmGateway gateway(stub_config(stub), cache);

  MultimodalMessage msg =
      plain_message({text_part("match?"), image_part(ground.string()),
                     image_part(aerial.string())});
  gateway.cached_complete(msg, false);
  int after_first = stub.request_count();

  std::string key = gateway.cache_key({{"user", msg}}, false);
  std::ofstream(cache / (key + ".json"), std::ios::trunc) << "{corrupt";

  VlmResponse resp = gateway.cached_complete(msg, false);
  CHECK_FALSE(resp.from_cache);
  CHECK(stub.request_count() == after_first + 1);
  CHECK(resp.text == "Score: 33");
  fs::remove_all(dir);
}

TEST_CASE("gateway handles concurrent callers under the in-flight cap") {
  testing::StubVlmServer stub;
  BackendConfig cfg = stub_config(stub);
  cfg.max_in_flight = 2;
  VlmGateway gateway(cfg);
  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      VlmResponse resp =
          gateway.complete(plain_message({text_part("ping")}), false);
      if (resp.text == "Score: 0") ok.fetch_add(1);
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok.load() == 8);
  CHECK(stub.request_count() == 8);
}

TEST_CASE("media types follow extensions") {
  CHECK(media_type_for("x/a.png") == "image/png");
  CHECK(media_type_for("a.JPG") == "image/jpeg");
  CHECK(media_type_for("a.jpeg") == "image/jpeg");
  CHECK(media_type_for("a.bin") == "application/octet-stream");
}

TEST_CASE("config-gated downscale shrinks the longest side") {
  cv::Mat img(48, 64, CV_8UC3, cv::Scalar(40, 80, 120));
  std::vector<unsigned char> encoded;
  REQUIRE(cv::imencode(".png", img, encoded));
  std::string bytes(encoded.begin(), encoded.end());

  std::string small = downscale_image(bytes, "image/png", 32);
  std::vector<unsigned char> buf(small.begin(), small.end());
  cv::Mat decoded = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  REQUIRE_FALSE(decoded.empty());
  CHECK(decoded.cols == 32);
  CHECK(decoded.rows == 24);

  // Already small enough: payload passes through untouched.
  CHECK(downscale_image(small, "image/png", 64) == small);
}

TEST_CASE("base64 matches known vectors") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("f") == "Zg==");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_encode("foo") == "Zm9v");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
}

TEST_CASE("sha256 matches known vectors") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
