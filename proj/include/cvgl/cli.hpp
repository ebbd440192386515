#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cvgl/gateway.hpp"
#include "cvgl/simbackend.hpp"
#include "cvgl/types.hpp"

namespace cvgl {

enum class BackendKind { http, oracle, synthetic };

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataViolation = 1;
inline constexpr int kExitIoConfig = 2;

struct RunConfig {
  BackendKind backend = BackendKind::oracle;
  StrategyId strategy = StrategyId::pairwise;
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path cache_dir;
  BackendConfig gateway;

  std::uint64_t seed = 0;
  double oracle_p = 0.0;
  std::string regime = "constant";
  SyntheticScoreConfig synthetic;  // used when regime == "custom"

  bool swap_consistency = false;
  bool per_call_noise = false;
  std::filesystem::path audit_log;    // empty = off
  std::filesystem::path scores_dump;  // empty = off
  int workers = 4;
};

int cmd_validate(const std::filesystem::path& input, std::ostream& out);
int cmd_rerank(const RunConfig& cfg, std::ostream& out);
int cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& input,
             std::vector<int> ks, const std::filesystem::path& report_dir,
             std::ostream& out);
int cmd_simulate(const std::vector<double>& grid, int trials, std::uint64_t seed,
                 int k, int n_queries, const std::filesystem::path& report_dir,
                 std::ostream& out);
int cmd_analyze(const std::filesystem::path& dump,
                const std::filesystem::path& report_dir, std::ostream& out);

/// Full argv entry point used by the cvgl binary.
int run_cli(int argc, const char* const* argv);

}  // namespace cvgl
