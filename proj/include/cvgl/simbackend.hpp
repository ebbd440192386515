#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cvgl/pairwise.hpp"
#include "cvgl/pointwise.hpp"
#include "cvgl/types.hpp"

namespace cvgl {

/// Simulated pairwise judge: the true order is ground truth first, then
/// ascending initial rank; each verdict is flipped with probability p.
struct OracleConfig {
  double flip_probability = 0.0;
  std::uint64_t seed = 0;
  // Default noise is keyed on the unordered pair, modelling a deterministic
  // but sometimes-wrong judge: the same pair always gets the same verdict.
  // Per-call mode redraws the flip on every invocation instead.
  bool per_call_noise = false;
};

/// Pure pair-keyed comparison; ignores per_call_noise.
PreferenceOutcome oracle_compare(const CandidateList& list,
                                 const AerialCandidate& a,
                                 const AerialCandidate& b,
                                 const OracleConfig& cfg);

/// Stateful judge supporting both noise modes. Create one per query so the
/// per-call counter stays deterministic under cross-query parallelism.
class OracleJudge {
 public:
  explicit OracleJudge(OracleConfig cfg)
      : cfg_(cfg), calls_(std::make_shared<std::atomic<std::uint64_t>>(0)) {}

  PreferenceOutcome operator()(const CandidateList& list,
                               const AerialCandidate& a,
                               const AerialCandidate& b) const;

 private:
  OracleConfig cfg_;
  std::shared_ptr<std::atomic<std::uint64_t>> calls_;
};

/// Class-conditional score generator for reproducing the pointwise failure
/// regimes: equal means with zero spread collapse to the baseline order;
/// separated means with small spread rank the true match first; overlapping
/// wide distributions drown the signal.
struct SyntheticScoreConfig {
  std::string regime = "custom";
  double mu_correct = 0.0;
  double sigma_correct = 0.0;
  double mu_incorrect = 0.0;
  double sigma_incorrect = 0.0;
  double range_lo = 0.0;
  double range_hi = 1.0;
  std::uint64_t seed = 0;
};

/// Named presets: "constant" (90/90, sigma 0, range 0-100), "separated"
/// (0.9/0.1, sigma 0.01, range 0-1), "overlapping" (0.7/0.5, sigma 0.3,
/// range 0-1). Throws std::invalid_argument for unknown names.
SyntheticScoreConfig synthetic_regime(const std::string& name, std::uint64_t seed);

/// Draws from the class-conditional normal, clamped to the configured range.
/// Deterministic in (seed, query_id, candidate id).
PointwiseScore synthetic_pointwise(const std::string& query_id,
                                   const AerialCandidate& candidate,
                                   bool is_ground_truth,
                                   const SyntheticScoreConfig& cfg,
                                   StrategyId strategy);

/// Synthetic dataset with the ground truth present at a seed-derived initial
/// position in every query's candidate list.
std::vector<CandidateList> make_synthetic_dataset(int n_queries, int k,
                                                  std::uint64_t seed);

struct NoiseSweepRow {
  double p = 0.0;
  double r1 = 0.0;  // percent
  double r3 = 0.0;
  double r5 = 0.0;
  double mean_calls = 0.0;
};

/// For each flip probability in the grid, reranks every dataset query with
/// `trials` independently seeded oracles and averages Recall@{1,3,5} and the
/// comparator call count. Requires every query's ground truth to be present
/// among its candidates; throws std::invalid_argument otherwise or on an
/// empty grid.
std::vector<NoiseSweepRow> run_noise_sweep(const std::vector<CandidateList>& dataset,
                                           const std::vector<double>& p_grid,
                                           int trials, std::uint64_t seed);

}  // namespace cvgl
