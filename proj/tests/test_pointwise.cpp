#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cvgl/pointwise.hpp"
#include "stub_vlm_server.hpp"

using namespace cvgl;
namespace fs = std::filesystem;

namespace {

TokenDistribution likert_dist(std::array<double, 5> p) {
  TokenDistribution dist;
  for (int k = 1; k <= 5; ++k) dist.probs[std::to_string(k)] = p[k - 1];
  return dist;
}

TokenDistribution yesno_dist(double yes, double no) {
  TokenDistribution dist;
  dist.probs["Yes"] = yes;
  dist.probs["No"] = no;
  return dist;
}

CandidateList list_with_ranks(int k) {
  CandidateList list;
  list.query = {"q", "img/q.jpg"};
  for (int rank = 1; rank <= k; ++rank) {
    list.candidates.push_back(
        {"c" + std::to_string(rank), "img/c.jpg", rank, {}});
  }
  list.k = k;
  return list;
}

std::vector<PointwiseScore> scores_from_values(
    const CandidateList& list, const std::vector<std::optional<double>>& values) {
  std::vector<PointwiseScore> scores;
  for (std::size_t i = 0; i < list.candidates.size(); ++i) {
    PointwiseScore s;
    s.candidate_id = list.candidates[i].id;
    s.strategy = StrategyId::direct;
    if (values[i]) {
      s.value = *values[i];
      s.valid = true;
    }
    scores.push_back(std::move(s));
  }
  return scores;
}

}  // namespace

TEST_CASE("parse_direct_score finds the first in-range integer") {
  CHECK(parse_direct_score("85") == 85);
  CHECK(parse_direct_score("Score: 100") == 100);
  CHECK(parse_direct_score("I'd say 72 out of 100") == 72);
  CHECK(parse_direct_score("0") == 0);
  CHECK_FALSE(parse_direct_score("very similar scenes").has_value());
  CHECK_FALSE(parse_direct_score("").has_value());
  // Out-of-range integers are skipped, not fatal.
  CHECK(parse_direct_score("rating 200 maybe, call it 50") == 50);
  CHECK_FALSE(parse_direct_score("105").has_value());
  CHECK_FALSE(parse_direct_score("12345678901234567890").has_value());
  CHECK(parse_direct_score("85.5") == 85);
}

TEST_CASE("expected_likert point mass and symmetry") {
  CHECK(*expected_likert(likert_dist({0, 0, 0, 0, 1})) ==
        doctest::Approx(5.0).epsilon(1e-12));
  CHECK(*expected_likert(likert_dist({0.2, 0.2, 0.2, 0.2, 0.2})) ==
        doctest::Approx(3.0).epsilon(1e-12));
  // Hand dot-product: 0.1 + 0.4 + 0.9 + 0.8 + 1.0 = 3.2.
  CHECK(*expected_likert(likert_dist({0.1, 0.2, 0.3, 0.2, 0.2})) ==
        doctest::Approx(3.2).epsilon(1e-12));
  // Renormalization: halving every mass leaves the expectation unchanged.
  CHECK(*expected_likert(likert_dist({0.05, 0.1, 0.15, 0.1, 0.1})) ==
        doctest::Approx(3.2).epsilon(1e-12));
  CHECK_FALSE(expected_likert(likert_dist({0, 0, 0, 0, 0})).has_value());
}

TEST_CASE("expected_likert equals the brute-force expectation on random mass") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> mass(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    std::array<double, 5> p{};
    for (double& v : p) v = mass(rng);
    double total = p[0] + p[1] + p[2] + p[3] + p[4];
    double expected = (1 * p[0] + 2 * p[1] + 3 * p[2] + 4 * p[3] + 5 * p[4]) / total;
    double got = *expected_likert(likert_dist(p));
    CHECK(std::abs(got - expected) <= 1e-12);
    CHECK(got >= 1.0);
    CHECK(got <= 5.0);
  }
}

TEST_CASE("yes_probability normalizes over the two labels") {
  CHECK(*yes_probability(yesno_dist(0.6, 0.2)) ==
        doctest::Approx(0.75).epsilon(1e-12));
  CHECK(*yes_probability(yesno_dist(0.5, 0.5)) ==
        doctest::Approx(0.5).epsilon(1e-12));
  CHECK_FALSE(yes_probability(yesno_dist(0.0, 0.0)).has_value());
}

TEST_CASE("rerank_pointwise keeps the initial order under constant scores") {
  CandidateList list = list_with_ranks(20);
  std::vector<std::optional<double>> values(20, 90.0);
  RerankResult result = rerank_pointwise(list, scores_from_values(list, values));
  std::vector<std::string> expected;
  for (const auto& c : list.candidates) expected.push_back(c.id);
  CHECK(result.order == expected);
  CHECK(result.comparator_calls == 0);
  CHECK(result.diagnostics.parse_failures == 0);
}

TEST_CASE("strictly decreasing scores give the identity permutation") {
  CandidateList list = list_with_ranks(8);
  std::vector<std::optional<double>> values;
  for (int i = 0; i < 8; ++i) values.push_back(100.0 - i);
  RerankResult result = rerank_pointwise(list, scores_from_values(list, values));
  for (std::size_t i = 0; i < list.candidates.size(); ++i) {
    CHECK(result.order[i] == list.candidates[i].id);
  }
}

TEST_CASE("rerank_pointwise matches a brute-force sort oracle for K <= 8") {
  std::mt19937_64 rng(4321);
  std::uniform_real_distribution<double> score(0.0, 100.0);
  for (int trial = 0; trial < 300; ++trial) {
    int k = 1 + static_cast<int>(rng() % 8);
    CandidateList list = list_with_ranks(k);
    std::vector<std::optional<double>> values;
    for (int i = 0; i < k; ++i) values.push_back(score(rng));

    RerankResult result = rerank_pointwise(list, scores_from_values(list, values));

    // Independent oracle: sort (value desc, rank asc) pairs.
    std::vector<std::pair<double, int>> oracle;
    for (int i = 0; i < k; ++i) oracle.emplace_back(-*values[i], i + 1);
    std::sort(oracle.begin(), oracle.end());
    for (int i = 0; i < k; ++i) {
      CHECK(result.order[i] == "c" + std::to_string(oracle[i].second));
    }
  }
}

TEST_CASE("invalid scores sink below valid ones in initial-rank order") {
  CandidateList list = list_with_ranks(5);
  std::vector<std::optional<double>> values{std::nullopt, 10.0, std::nullopt,
                                            50.0, 20.0};
  RerankResult result = rerank_pointwise(list, scores_from_values(list, values));
  CHECK(result.order ==
        std::vector<std::string>{"c4", "c5", "c2", "c1", "c3"});
  CHECK(result.diagnostics.parse_failures == 2);
  CHECK(result.diagnostics.fallbacks == 2);
  REQUIRE(result.scores.has_value());
  CHECK_FALSE((*result.scores)[3].has_value());
  CHECK((*result.scores)[0] == 50.0);
}

TEST_CASE("rerank_pointwise requires a score per candidate") {
  CandidateList list = list_with_ranks(3);
  std::vector<PointwiseScore> scores =
      scores_from_values(list, {1.0, 2.0, 3.0});
  scores.pop_back();
  CHECK_THROWS_AS(rerank_pointwise(list, scores), std::invalid_argument);
}

TEST_CASE("monotone transforms of scores never change the order") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    int k = 2 + static_cast<int>(rng() % 19);
    CandidateList list = list_with_ranks(k);
    std::vector<std::optional<double>> values;
    for (int i = 0; i < k; ++i) values.push_back(score(rng));
    RerankResult base = rerank_pointwise(list, scores_from_values(list, values));

    std::vector<std::optional<double>> affine, expo;
    for (const auto& v : values) {
      affine.push_back(2.0 * *v + 1.0);
      expo.push_back(std::exp(*v));
    }
    CHECK(rerank_pointwise(list, scores_from_values(list, affine)).order ==
          base.order);
    CHECK(rerank_pointwise(list, scores_from_values(list, expo)).order ==
          base.order);

    std::vector<std::string> sorted_order = base.order;
    std::vector<std::string> input_ids;
    for (const auto& c : list.candidates) input_ids.push_back(c.id);
    std::sort(sorted_order.begin(), sorted_order.end());
    std::sort(input_ids.begin(), input_ids.end());
    CHECK(sorted_order == input_ids);  // permutation, always
  }
}

namespace {

struct StubFixture {
  testing::StubVlmServer stub;
  fs::path dir;
  GroundQuery query;

  StubFixture() {
    dir = fs::temp_directory_path() /
          ("cvgl_pointwise_" + std::to_string(::getpid()) + "_" +
           std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(dir);
    std::ofstream(dir / "ground.img", std::ios::binary) << "ground-0";
    query = {"q", (dir / "ground.img").string()};
  }
  ~StubFixture() { fs::remove_all(dir); }

  AerialCandidate candidate(int rank, int n) {
    std::string name = "aerial" + std::to_string(rank) + ".img";
    std::ofstream(dir / name, std::ios::binary) << "aerial-" << n;
    return {"c" + std::to_string(rank), (dir / name).string(), rank, {}};
  }

  VlmGateway gateway() {
    BackendConfig cfg;
    cfg.endpoint_url = stub.endpoint();
    cfg.model_id = "stub-vlm";
    cfg.retry.base_backoff = std::chrono::milliseconds(5);
    return VlmGateway(cfg);
  }
};

}  // namespace

TEST_CASE("yesno scoring over the stub recovers the encoded probability") {
  StubFixture fx;
  VlmGateway gateway = fx.gateway();
  VlmPointwiseScorer scorer(StrategyId::yesno, gateway);
  PointwiseScore s = scorer.score(fx.query, fx.candidate(1, 64));
  CHECK(s.valid);
  // P(Yes)=0.64, P(No)=0.36 -> 0.64 after normalization.
  CHECK(s.value == doctest::Approx(0.64).epsilon(1e-9));
}

TEST_CASE("direct scoring over the stub parses the score text") {
  StubFixture fx;
  VlmGateway gateway = fx.gateway();
  VlmPointwiseScorer scorer(StrategyId::direct, gateway);
  PointwiseScore s = scorer.score(fx.query, fx.candidate(1, 77));
  CHECK(s.valid);
  CHECK(s.value == 77.0);
  CHECK(s.raw_text == "Score: 77");
}

TEST_CASE("likert scoring over the stub matches the hand-computed expectation") {
  StubFixture fx;
  VlmGateway gateway = fx.gateway();
  VlmPointwiseScorer scorer(StrategyId::likert, gateway);
  // n=37 -> digit 3 at 0.8, digit 1 at 0.05 -> (2.4 + 0.05) / 0.85.
  PointwiseScore s = scorer.score(fx.query, fx.candidate(1, 37));
  CHECK(s.valid);
  CHECK(s.value == doctest::Approx((0.8 * 3 + 0.05 * 1) / 0.85).epsilon(1e-9));
}

TEST_CASE("reason_yesno runs two turns and scores the second") {
  StubFixture fx;
  VlmGateway gateway = fx.gateway();
  VlmPointwiseScorer scorer(StrategyId::reason_yesno, gateway);
  PointwiseScore s = scorer.score(fx.query, fx.candidate(1, 90));
  CHECK(s.valid);
  CHECK(s.value == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(fx.stub.request_count() == 2);
}

TEST_CASE("unparseable direct replies surface as invalid scores") {
  StubFixture fx;
  fx.stub.set_override_content("the scenes look alike");
  VlmGateway gateway = fx.gateway();
  VlmPointwiseScorer scorer(StrategyId::direct, gateway);
  PointwiseScore s = scorer.score(fx.query, fx.candidate(1, 10));
  CHECK_FALSE(s.valid);
  CHECK(s.raw_text == "the scenes look alike");
}

TEST_CASE("zero mass on every target label marks the score invalid") {
  StubFixture fx;
  fx.stub.set_gibberish_logprobs(true);
  VlmGateway gateway = fx.gateway();
  // Answer tokens carry no Yes/No mass at all, including at turn 2 of the
  // reasoning strategy.
  VlmPointwiseScorer yesno(StrategyId::yesno, gateway);
  CHECK_FALSE(yesno.score(fx.query, fx.candidate(1, 40)).valid);
  VlmPointwiseScorer reason(StrategyId::reason_yesno, gateway);
  CHECK_FALSE(reason.score(fx.query, fx.candidate(2, 40)).valid);
  VlmPointwiseScorer likert(StrategyId::likert, gateway);
  CHECK_FALSE(likert.score(fx.query, fx.candidate(3, 40)).valid);
}
