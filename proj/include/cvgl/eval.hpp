#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cvgl/types.hpp"

namespace cvgl {

struct KRecall {
  int k = 0;
  std::int64_t hits = 0;
  double recall = 0.0;  // percent

  bool operator==(const KRecall&) const = default;
};

struct EvalReport {
  StrategyId strategy = StrategyId::direct;
  std::int64_t n_queries = 0;
  std::vector<KRecall> recalls;  // ascending k
  double mean_comparator_calls = 0.0;
  std::int64_t max_comparator_calls = 0;
  Diagnostics diagnostics;  // totals across results

  bool operator==(const EvalReport&) const = default;
};

/// Maps query id to its true satellite id; nullopt when the dataset records
/// no ground truth for the query (counted a miss at every k).
using TruthMap = std::map<std::string, std::optional<std::string>>;

TruthMap truths_from_candidates(const std::vector<CandidateList>& lists);

/// A query is a hit at k iff its ground-truth id appears within the first k
/// positions of the result order; a ground truth absent from the order is a
/// miss at every k. All results must share one strategy and every query
/// needs a truth entry. Throws std::invalid_argument on empty results,
/// k < 1, a missing truth entry, or mixed strategies.
EvalReport recall_at_k(const std::vector<RerankResult>& results,
                       const TruthMap& truths, std::vector<int> ks);

inline constexpr int kHistogramBins = 20;

struct ClassStats {
  std::int64_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population (divisor n)
  std::array<double, kHistogramBins> histogram{};  // normalized, sums to 1

  bool operator==(const ClassStats&) const = default;
};

/// Correct-vs-incorrect score distribution summary. Histograms span
/// [range_lo, range_hi] in 20 equal bins, right-open except the last; the
/// overlap coefficient is the binwise sum of minima (1 = indistinguishable).
/// Stats for an empty class are absent, as is the overlap.
struct ScoreDistributionSummary {
  StrategyId strategy = StrategyId::direct;
  double range_lo = 0.0;
  double range_hi = 1.0;
  std::optional<ClassStats> correct;
  std::optional<ClassStats> incorrect;
  std::optional<double> overlap_coefficient;

  bool operator==(const ScoreDistributionSummary&) const = default;
};

/// scores: (value, is_ground_truth) pairs. Throws std::invalid_argument on a
/// degenerate range.
ScoreDistributionSummary class_stats(
    const std::vector<std::pair<double, bool>>& scores, double range_lo,
    double range_hi);

/// Deterministic serializations (same input, identical bytes).
std::string reports_to_json(const std::vector<EvalReport>& reports);
std::vector<EvalReport> reports_from_json(const std::string& bytes);
std::string reports_to_csv(const std::vector<EvalReport>& reports);
std::string summary_to_json(const ScoreDistributionSummary& summary);
std::string histogram_svg(const ScoreDistributionSummary& summary);

/// One line of the per-candidate score dump consumed by `analyze`.
struct ScoreRecord {
  std::string query_id;
  std::string candidate_id;
  StrategyId strategy = StrategyId::direct;
  std::optional<double> value;  // absent when the score was invalid
  bool valid = false;
  bool is_ground_truth = false;

  bool operator==(const ScoreRecord&) const = default;
};

void save_score_dump(const std::vector<ScoreRecord>& records,
                     const std::filesystem::path& path);
std::vector<ScoreRecord> load_score_dump(const std::filesystem::path& path);

/// Score range a strategy's values live in (0-100, 1-5, or 0-1).
std::pair<double, double> strategy_score_range(StrategyId strategy);

/// Noise-sweep table emission (CSV + JSON mirror of the row fields).
struct NoiseSweepRow;
std::string sweep_to_csv(const std::vector<NoiseSweepRow>& rows);
std::string sweep_to_json(const std::vector<NoiseSweepRow>& rows);
std::string sweep_svg(const std::vector<NoiseSweepRow>& rows);

}  // namespace cvgl
