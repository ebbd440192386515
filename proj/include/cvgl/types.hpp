#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cvgl {

/// Reranking strategies. The first four score candidates independently;
/// pairwise orders them through two-way comparisons.
enum class StrategyId { direct, likert, yesno, reason_yesno, pairwise };

constexpr std::string_view to_string(StrategyId s) {
  switch (s) {
    case StrategyId::direct: return "direct";
    case StrategyId::likert: return "likert";
    case StrategyId::yesno: return "yesno";
    case StrategyId::reason_yesno: return "reason_yesno";
    case StrategyId::pairwise: return "pairwise";
  }
  return "direct";
}

std::optional<StrategyId> strategy_from_string(std::string_view name);

constexpr bool is_pointwise(StrategyId s) { return s != StrategyId::pairwise; }

/// All five strategies in a stable order (enum order).
inline constexpr StrategyId kAllStrategies[] = {
    StrategyId::direct, StrategyId::likert, StrategyId::yesno,
    StrategyId::reason_yesno, StrategyId::pairwise};

/// Ground-level query panorama.
struct GroundQuery {
  std::string id;
  std::string image_ref;  // URI or filesystem path

  bool operator==(const GroundQuery&) const = default;
};

/// One aerial/satellite candidate from the first-stage retriever.
struct AerialCandidate {
  std::string id;
  std::string image_ref;
  int initial_rank = 0;  // 1-based position in the initial list
  std::optional<double> retrieval_score;

  bool operator==(const AerialCandidate&) const = default;
};

/// A query plus its ordered top-K candidates. ground_truth_id may name an
/// id that is absent from the candidates; that is legal and means the true
/// match fell outside the top-K.
struct CandidateList {
  GroundQuery query;
  std::vector<AerialCandidate> candidates;
  std::optional<std::string> ground_truth_id;
  int k = 0;  // must equal candidates.size()

  bool operator==(const CandidateList&) const = default;
};

struct Diagnostics {
  std::int64_t parse_failures = 0;
  std::int64_t fallbacks = 0;
  // Run telemetry; reported in summaries but never persisted in result files
  // (a warm-cache rerun must reproduce the output byte for byte).
  std::int64_t cache_hits = 0;

  Diagnostics& operator+=(const Diagnostics& o) {
    parse_failures += o.parse_failures;
    fallbacks += o.fallbacks;
    cache_hits += o.cache_hits;
    return *this;
  }
  bool operator==(const Diagnostics&) const = default;
};

/// Output of one reranked query: a permutation of the input candidate ids,
/// most preferred first.
struct RerankResult {
  std::string query_id;
  StrategyId strategy = StrategyId::direct;
  std::vector<std::string> order;
  // Per-candidate scores aligned with `order`; nullopt for candidates whose
  // score was invalid, absent entirely for pairwise.
  std::optional<std::vector<std::optional<double>>> scores;
  std::int64_t comparator_calls = 0;
  Diagnostics diagnostics;

  bool operator==(const RerankResult&) const = default;
};

}  // namespace cvgl
