#include "cvgl/simbackend.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

#include "cvgl/digest.hpp"

namespace cvgl {

namespace {

bool true_order_prefers_a(const CandidateList& list, const AerialCandidate& a,
                          const AerialCandidate& b) {
  if (list.ground_truth_id) {
    if (a.id == *list.ground_truth_id) return true;
    if (b.id == *list.ground_truth_id) return false;
  }
  return a.initial_rank < b.initial_rank;
}

PreferenceOutcome oracle_outcome(const CandidateList& list,
                                 const AerialCandidate& a,
                                 const AerialCandidate& b, bool flip) {
  bool a_wins = true_order_prefers_a(list, a, b) != flip;
  PreferenceOutcome outcome;
  outcome.winner = a_wins ? PreferenceOutcome::Winner::first
                          : PreferenceOutcome::Winner::second;
  outcome.source = PreferenceOutcome::Source::model;
  outcome.raw_text = a_wins ? R"({"preference": "1"})" : R"({"preference": "2"})";
  outcome.presented_pair = {a.id, b.id};
  return outcome;
}

}  // namespace

PreferenceOutcome oracle_compare(const CandidateList& list,
                                 const AerialCandidate& a,
                                 const AerialCandidate& b,
                                 const OracleConfig& cfg) {
  // Keyed on the unordered pair: (A,B) and (B,A) always agree on the winner.
  const std::string& lo = std::min(a.id, b.id);
  const std::string& hi = std::max(a.id, b.id);
  double u = unit_interval(
      stable_hash64(cfg.seed, {"oracle", list.query.id, lo, hi}));
  return oracle_outcome(list, a, b, u < cfg.flip_probability);
}

PreferenceOutcome OracleJudge::operator()(const CandidateList& list,
                                          const AerialCandidate& a,
                                          const AerialCandidate& b) const {
  if (!cfg_.per_call_noise) return oracle_compare(list, a, b, cfg_);
  std::uint64_t call = calls_->fetch_add(1, std::memory_order_relaxed);
  double u = unit_interval(stable_hash64(
      cfg_.seed, {"oracle-call", list.query.id, std::to_string(call)}));
  return oracle_outcome(list, a, b, u < cfg_.flip_probability);
}

SyntheticScoreConfig synthetic_regime(const std::string& name, std::uint64_t seed) {
  SyntheticScoreConfig cfg;
  cfg.regime = name;
  cfg.seed = seed;
  if (name == "constant") {
    cfg.mu_correct = cfg.mu_incorrect = 90.0;
    cfg.sigma_correct = cfg.sigma_incorrect = 0.0;
    cfg.range_lo = 0.0;
    cfg.range_hi = 100.0;
  } else if (name == "separated") {
    cfg.mu_correct = 0.9;
    cfg.mu_incorrect = 0.1;
    cfg.sigma_correct = cfg.sigma_incorrect = 0.01;
    cfg.range_lo = 0.0;
    cfg.range_hi = 1.0;
  } else if (name == "overlapping") {
    cfg.mu_correct = 0.7;
    cfg.mu_incorrect = 0.5;
    cfg.sigma_correct = cfg.sigma_incorrect = 0.3;
    cfg.range_lo = 0.0;
    cfg.range_hi = 1.0;
  } else {
    throw std::invalid_argument("unknown synthetic regime '" + name + "'");
  }
  return cfg;
}

PointwiseScore synthetic_pointwise(const std::string& query_id,
                                   const AerialCandidate& candidate,
                                   bool is_ground_truth,
                                   const SyntheticScoreConfig& cfg,
                                   StrategyId strategy) {
  double mu = is_ground_truth ? cfg.mu_correct : cfg.mu_incorrect;
  double sigma = is_ground_truth ? cfg.sigma_correct : cfg.sigma_incorrect;
  double z = standard_normal(
      stable_hash64(cfg.seed, {"synth", query_id, candidate.id}));
  double value = std::clamp(mu + sigma * z, cfg.range_lo, cfg.range_hi);

  PointwiseScore score;
  score.candidate_id = candidate.id;
  score.strategy = strategy;
  score.value = value;
  score.valid = true;
  return score;
}

std::vector<CandidateList> make_synthetic_dataset(int n_queries, int k,
                                                  std::uint64_t seed) {
  if (n_queries < 0 || k < 1) {
    throw std::invalid_argument("need n_queries >= 0 and k >= 1");
  }
  std::vector<CandidateList> out;
  out.reserve(static_cast<std::size_t>(n_queries));
  char buf[64];
  for (int q = 0; q < n_queries; ++q) {
    std::snprintf(buf, sizeof(buf), "q%04d", q);
    CandidateList list;
    list.query.id = buf;
    list.query.image_ref = "synthetic://" + list.query.id + "/ground";
    int gt_rank = 1 + static_cast<int>(
        stable_hash64(seed, {"gtpos", list.query.id}) % static_cast<std::uint64_t>(k));
    for (int rank = 1; rank <= k; ++rank) {
      AerialCandidate c;
      std::snprintf(buf, sizeof(buf), "%s_c%02d", list.query.id.c_str(), rank);
      c.id = buf;
      c.image_ref = "synthetic://" + list.query.id + "/aerial/" + c.id;
      c.initial_rank = rank;
      c.retrieval_score = 1.0 - static_cast<double>(rank) / (k + 1);
      if (rank == gt_rank) list.ground_truth_id = c.id;
      list.candidates.push_back(std::move(c));
    }
    list.k = k;
    out.push_back(std::move(list));
  }
  return out;
}

std::vector<NoiseSweepRow> run_noise_sweep(const std::vector<CandidateList>& dataset,
                                           const std::vector<double>& p_grid,
                                           int trials, std::uint64_t seed) {
  if (p_grid.empty()) throw std::invalid_argument("empty flip-probability grid");
  for (double p : p_grid) {
    if (p < 0.0 || p > 1.0) {
      throw std::invalid_argument("flip probability out of [0,1]");
    }
  }
  if (trials < 1) throw std::invalid_argument("need trials >= 1");
  for (const CandidateList& list : dataset) {
    bool present = list.ground_truth_id &&
                   std::any_of(list.candidates.begin(), list.candidates.end(),
                               [&](const AerialCandidate& c) {
                                 return c.id == *list.ground_truth_id;
                               });
    if (!present) {
      throw std::invalid_argument("query '" + list.query.id +
                                  "' has no ground truth among candidates");
    }
  }

  std::vector<NoiseSweepRow> rows;
  rows.reserve(p_grid.size());
  for (double p : p_grid) {
    std::int64_t hits1 = 0, hits3 = 0, hits5 = 0, calls = 0;
    for (int t = 0; t < trials; ++t) {
      OracleConfig cfg{p, stable_hash64(seed, {"trial", std::to_string(t)}), false};
      for (const CandidateList& list : dataset) {
        RerankResult result = merge_sort_rerank(list, OracleJudge(cfg));
        calls += result.comparator_calls;
        auto pos = std::find(result.order.begin(), result.order.end(),
                             *list.ground_truth_id) -
                   result.order.begin();
        if (pos < 1) ++hits1;
        if (pos < 3) ++hits3;
        if (pos < 5) ++hits5;
      }
    }
    double n = static_cast<double>(dataset.size()) * trials;
    rows.push_back({p, 100.0 * hits1 / n, 100.0 * hits3 / n, 100.0 * hits5 / n,
                    calls / n});
  }
  return rows;
}

}  // namespace cvgl
