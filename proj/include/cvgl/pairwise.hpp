#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "cvgl/gateway.hpp"
#include "cvgl/types.hpp"

namespace cvgl {

/// Result of one two-way comparison. winner refers to the presented order
/// (slot 1 / slot 2), not to candidate ids.
struct PreferenceOutcome {
  enum class Winner { first, second };
  enum class Source { model, fallback_parse, fallback_error };

  Winner winner = Winner::first;
  Source source = Source::model;
  std::string raw_text;
  std::pair<std::string, std::string> presented_pair;  // (slot 1 id, slot 2 id)
  bool from_cache = false;
  std::int64_t latency_ms = 0;
};

/// Strict parse of the whole text as {"preference": "1"|"2"} (string or bare
/// digit); on failure, lenient mode extracts the first well-formed
/// {"preference": ...} object substring. nullopt when nothing parses.
std::optional<int> parse_preference(std::string_view text);

/// Comparison function driving the sorter. Receives the whole list for query
/// and ground-truth context; must never throw (faults become fallbacks).
using PairwiseJudge = std::function<PreferenceOutcome(
    const CandidateList&, const AerialCandidate&, const AerialCandidate&)>;

/// VLM-backed judge: renders the pairwise prompt with (first, second) in
/// slots 1 and 2. Unparseable replies and backend errors degrade to the
/// candidate with the smaller initial rank.
class VlmPairwiseJudge {
 public:
  explicit VlmPairwiseJudge(VlmGateway& gateway) : gateway_(gateway) {}

  PreferenceOutcome operator()(const CandidateList& list,
                               const AerialCandidate& first,
                               const AerialCandidate& second) const;

 private:
  VlmGateway& gateway_;
};

struct MergeSortOptions {
  // When set, every comparison is issued twice with slots swapped; a
  // disagreement falls back to the smaller initial rank. Doubles the budget.
  bool swap_consistency = false;
};

/// Top-down merge sort over the initial order; fixed halving schedule with
/// the left run = first ceil(n/2) elements. Within a merge the two run
/// fronts are presented with the left run's element in slot 1, the winner is
/// emitted first, and once a run empties the rest of the other is appended
/// without further calls. comparator_calls <= K*ceil(log2 K) (x2 with
/// swap_consistency) and 0 when K <= 1.
RerankResult merge_sort_rerank(const CandidateList& list,
                               const PairwiseJudge& judge,
                               const MergeSortOptions& options = {});

/// One audit record per comparison, in issue order.
struct ComparisonAudit {
  std::string query_id;
  std::string first_id;
  std::string second_id;
  PreferenceOutcome::Winner winner;
  PreferenceOutcome::Source source;
  std::int64_t latency_ms = 0;
};

/// Variant that also returns the audit trail for the optional log.
RerankResult merge_sort_rerank(const CandidateList& list,
                               const PairwiseJudge& judge,
                               const MergeSortOptions& options,
                               std::vector<ComparisonAudit>* audit);

}  // namespace cvgl
