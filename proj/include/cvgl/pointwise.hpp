#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cvgl/gateway.hpp"
#include "cvgl/types.hpp"

namespace cvgl {

/// One candidate's absolute relevance under a pointwise strategy. When
/// valid is false the value is a sentinel and must never be compared.
struct PointwiseScore {
  std::string candidate_id;
  StrategyId strategy = StrategyId::direct;
  double value = 0.0;
  bool valid = false;
  std::string raw_text;    // model reply (or error note) the score came from
  bool from_cache = false;
};

/// First decimal integer literal in [0, 100]; out-of-range integers are
/// skipped. nullopt when no in-range integer exists.
std::optional<int> parse_direct_score(std::string_view text);

/// Expected Likert score: sum(k * p_k) / sum(p_k) over labels "1".."5",
/// renormalized because top-N truncation need not sum to 1. Result in [1,5].
/// nullopt when all five labels carry zero mass.
std::optional<double> expected_likert(const TokenDistribution& dist);

/// P(Yes) / (P(Yes) + P(No)); nullopt when both labels carry zero mass.
std::optional<double> yes_probability(const TokenDistribution& dist);

/// Scores candidates against a query through a VLM gateway. Gateway faults
/// propagate; callers running whole datasets absorb them per candidate.
class VlmPointwiseScorer {
 public:
  VlmPointwiseScorer(StrategyId strategy, VlmGateway& gateway);

  PointwiseScore score(const GroundQuery& query, const AerialCandidate& candidate);

 private:
  PointwiseScore score_reason_yesno(const GroundQuery& query,
                                    const AerialCandidate& candidate);

  StrategyId strategy_;
  VlmGateway& gateway_;
};

/// Sorts valid scores descending, ties broken by initial rank (stable with
/// respect to the initial list); invalid scores sink below all valid ones in
/// initial-rank order. comparator_calls is always 0.
/// Throws std::invalid_argument when a candidate is missing a score.
RerankResult rerank_pointwise(const CandidateList& list,
                              const std::vector<PointwiseScore>& scores);

}  // namespace cvgl
