#include "cvgl/cli.hpp"

#include <atomic>
#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvgl/dataio.hpp"
#include "cvgl/eval.hpp"
#include "cvgl/pairwise.hpp"
#include "cvgl/pointwise.hpp"

namespace cvgl {

namespace {

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn) {
  workers = std::clamp(workers, 1, 256);
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      while (true) {
        std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string audit_to_json_line(const ComparisonAudit& a) {
  nlohmann::json j = {
      {"query_id", a.query_id},
      {"first_id", a.first_id},
      {"second_id", a.second_id},
      {"winner", a.winner == PreferenceOutcome::Winner::first ? "first" : "second"},
      {"source", a.source == PreferenceOutcome::Source::model ? "model"
                 : a.source == PreferenceOutcome::Source::fallback_parse
                     ? "fallback_parse"
                     : "fallback_error"},
      {"latency_ms", a.latency_ms}};
  return j.dump();
}

}  // namespace

int cmd_validate(const std::filesystem::path& input, std::ostream& out) {
  LenientLoadResult loaded;
  try {
    loaded = load_candidates_lenient(input);
  } catch (const std::runtime_error& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }
  for (const LineIssue& issue : loaded.issues) {
    out << "line " << issue.line;
    if (!issue.query_id.empty()) out << " query '" << issue.query_id << "'";
    out << " " << issue.field << ": " << issue.message << "\n";
  }
  if (!loaded.issues.empty()) return kExitDataViolation;
  out << "ok: " << loaded.lists.size() << " queries valid\n";
  return kExitOk;
}

namespace {

struct QueryOutput {
  RerankResult result;
  std::vector<ComparisonAudit> audit;
  std::vector<ScoreRecord> scores;
};

bool is_gt(const CandidateList& list, const AerialCandidate& c) {
  return list.ground_truth_id && c.id == *list.ground_truth_id;
}

QueryOutput rerank_one(const CandidateList& list, const RunConfig& cfg,
                       VlmGateway* gateway) {
  QueryOutput out;
  bool want_audit = !cfg.audit_log.empty();

  if (cfg.strategy == StrategyId::pairwise) {
    MergeSortOptions options{cfg.swap_consistency};
    PairwiseJudge judge;
    if (cfg.backend == BackendKind::http) {
      judge = VlmPairwiseJudge(*gateway);
    } else {
      judge = OracleJudge({cfg.oracle_p, cfg.seed, cfg.per_call_noise});
    }
    out.result = merge_sort_rerank(list, judge, options,
                                   want_audit ? &out.audit : nullptr);
    return out;
  }

  std::vector<PointwiseScore> scores;
  scores.reserve(list.candidates.size());
  if (cfg.backend == BackendKind::synthetic) {
    SyntheticScoreConfig synth = cfg.regime == "custom"
                                     ? cfg.synthetic
                                     : synthetic_regime(cfg.regime, cfg.seed);
    for (const AerialCandidate& c : list.candidates) {
      scores.push_back(synthetic_pointwise(list.query.id, c, is_gt(list, c),
                                           synth, cfg.strategy));
    }
  } else {
    VlmPointwiseScorer scorer(cfg.strategy, *gateway);
    for (const AerialCandidate& c : list.candidates) {
      try {
        scores.push_back(scorer.score(list.query, c));
      } catch (const std::exception& e) {
        PointwiseScore failed;
        failed.candidate_id = c.id;
        failed.strategy = cfg.strategy;
        failed.raw_text = std::string("<error: ") + e.what() + ">";
        scores.push_back(std::move(failed));
      }
    }
  }
  for (const PointwiseScore& s : scores) {
    out.scores.push_back({list.query.id, s.candidate_id, s.strategy,
                          s.valid ? std::optional<double>(s.value) : std::nullopt,
                          s.valid,
                          list.ground_truth_id && s.candidate_id == *list.ground_truth_id});
  }
  out.result = rerank_pointwise(list, scores);
  return out;
}

}  // namespace

namespace {

bool uses_logprobs(StrategyId strategy) {
  return strategy == StrategyId::likert || strategy == StrategyId::yesno ||
         strategy == StrategyId::reason_yesno;
}

}  // namespace

int cmd_rerank(const RunConfig& cfg, std::ostream& out) {
  // Misconfiguration aborts before any call.
  if (cfg.backend == BackendKind::http &&
      (cfg.gateway.endpoint_url.empty() || cfg.gateway.model_id.empty())) {
    out << "error: http backend requires --endpoint and --model\n";
    return kExitIoConfig;
  }
  if (cfg.gateway.temperature < 0.0) {
    out << "error: temperature must be >= 0\n";
    return kExitIoConfig;
  }
  if (cfg.backend == BackendKind::http && uses_logprobs(cfg.strategy) &&
      cfg.gateway.logprob_top_n < 5) {
    out << "error: --top-logprobs must be >= 5 for logprob-based strategies "
           "(must cover the tokens '1'..'5')\n";
    return kExitIoConfig;
  }
  if (cfg.backend == BackendKind::oracle && cfg.strategy != StrategyId::pairwise) {
    out << "error: the oracle backend only drives the pairwise strategy\n";
    return kExitIoConfig;
  }
  if (cfg.backend == BackendKind::synthetic && cfg.strategy == StrategyId::pairwise) {
    out << "error: the synthetic backend only drives pointwise strategies\n";
    return kExitIoConfig;
  }
  if (cfg.output.empty()) {
    out << "error: --output is required\n";
    return kExitIoConfig;
  }

  std::vector<CandidateList> lists;
  try {
    lists = load_candidates(cfg.input);
  } catch (const SchemaError& e) {
    out << "error: " << cfg.input.string() << ": " << e.what() << "\n";
    return kExitDataViolation;
  } catch (const std::runtime_error& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }

  std::optional<VlmGateway> gateway;
  if (cfg.backend == BackendKind::http) {
    gateway.emplace(cfg.gateway, cfg.cache_dir);
  }

  std::vector<QueryOutput> outputs(lists.size());
  try {
    parallel_for(lists.size(), cfg.workers, [&](std::size_t i) {
      outputs[i] = rerank_one(lists[i], cfg, gateway ? &*gateway : nullptr);
    });
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }

  std::vector<RerankResult> results;
  results.reserve(outputs.size());
  Diagnostics totals;
  std::int64_t total_calls = 0;
  for (QueryOutput& q : outputs) {
    totals += q.result.diagnostics;
    total_calls += q.result.comparator_calls;
    results.push_back(std::move(q.result));
  }

  try {
    save_results(results, cfg.output);
    if (!cfg.audit_log.empty()) {
      std::string content;
      for (const QueryOutput& q : outputs) {
        for (const ComparisonAudit& a : q.audit) {
          content += audit_to_json_line(a);
          content += '\n';
        }
      }
      atomic_write_file(cfg.audit_log, content);
    }
    if (!cfg.scores_dump.empty()) {
      std::vector<ScoreRecord> records;
      for (const QueryOutput& q : outputs) {
        records.insert(records.end(), q.scores.begin(), q.scores.end());
      }
      save_score_dump(records, cfg.scores_dump);
    }
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }

  out << "queries=" << results.size() << " calls=" << total_calls
      << " cache_hits=" << totals.cache_hits << " fallbacks=" << totals.fallbacks
      << " parse_failures=" << totals.parse_failures << "\n";
  out << "wrote " << cfg.output.string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& input,
             std::vector<int> ks, const std::filesystem::path& report_dir,
             std::ostream& out) {
  std::vector<RerankResult> results;
  std::vector<CandidateList> lists;
  try {
    results = load_results(pred);
    lists = load_candidates(input);
  } catch (const SchemaError& e) {
    out << "error: " << e.what() << "\n";
    return kExitDataViolation;
  } catch (const std::runtime_error& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }
  if (results.empty()) {
    out << "error: no results in " << pred.string() << "\n";
    return kExitDataViolation;
  }

  TruthMap truths = truths_from_candidates(lists);
  std::vector<std::string> unmatched;
  for (const RerankResult& r : results) {
    if (!truths.contains(r.query_id)) unmatched.push_back(r.query_id);
  }
  if (!unmatched.empty()) {
    for (const std::string& id : unmatched) {
      out << "no such query in input: '" << id << "'\n";
    }
    return kExitDataViolation;
  }

  std::vector<EvalReport> reports;
  for (StrategyId strategy : kAllStrategies) {
    std::vector<RerankResult> group;
    for (const RerankResult& r : results) {
      if (r.strategy == strategy) group.push_back(r);
    }
    if (group.empty()) continue;
    try {
      reports.push_back(recall_at_k(group, truths, ks));
    } catch (const std::invalid_argument& e) {
      out << "error: " << e.what() << "\n";
      return kExitDataViolation;
    }
  }

  try {
    atomic_write_file(report_dir / "report.json", reports_to_json(reports));
    atomic_write_file(report_dir / "report.csv", reports_to_csv(reports));
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }
  out << reports_to_csv(reports);
  out << "wrote " << (report_dir / "report.json").string() << " and "
      << (report_dir / "report.csv").string() << "\n";
  return kExitOk;
}

int cmd_simulate(const std::vector<double>& grid, int trials, std::uint64_t seed,
                 int k, int n_queries, const std::filesystem::path& report_dir,
                 std::ostream& out) {
  std::vector<NoiseSweepRow> rows;
  try {
    std::vector<CandidateList> dataset = make_synthetic_dataset(n_queries, k, seed);
    rows = run_noise_sweep(dataset, grid, trials, seed);
  } catch (const std::invalid_argument& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }
  try {
    atomic_write_file(report_dir / "sweep.csv", sweep_to_csv(rows));
    atomic_write_file(report_dir / "sweep.json", sweep_to_json(rows));
    atomic_write_file(report_dir / "sweep.svg", sweep_svg(rows));
  } catch (const std::exception& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }
  out << sweep_to_csv(rows);
  out << "wrote sweep.{csv,json,svg} under " << report_dir.string() << "\n";
  return kExitOk;
}

int cmd_analyze(const std::filesystem::path& dump,
                const std::filesystem::path& report_dir, std::ostream& out) {
  std::vector<ScoreRecord> records;
  try {
    records = load_score_dump(dump);
  } catch (const SchemaError& e) {
    out << "error: " << e.what() << "\n";
    return kExitDataViolation;
  } catch (const std::runtime_error& e) {
    out << "error: " << e.what() << "\n";
    return kExitIoConfig;
  }

  bool wrote_any = false;
  for (StrategyId strategy : kAllStrategies) {
    std::vector<std::pair<double, bool>> scores;
    for (const ScoreRecord& r : records) {
      if (r.strategy == strategy && r.valid && r.value) {
        scores.emplace_back(*r.value, r.is_ground_truth);
      }
    }
    if (scores.empty()) continue;
    auto [lo, hi] = strategy_score_range(strategy);
    ScoreDistributionSummary summary = class_stats(scores, lo, hi);
    summary.strategy = strategy;
    if (!summary.correct) {
      out << "warning: no correct-class scores for strategy "
          << to_string(strategy) << "\n";
    }
    if (!summary.incorrect) {
      out << "warning: no incorrect-class scores for strategy "
          << to_string(strategy) << "\n";
    }
    std::string stem = "analysis_" + std::string(to_string(strategy));
    try {
      atomic_write_file(report_dir / (stem + ".json"), summary_to_json(summary));
      atomic_write_file(report_dir / (stem + ".svg"), histogram_svg(summary));
    } catch (const std::exception& e) {
      out << "error: " << e.what() << "\n";
      return kExitIoConfig;
    }
    out << to_string(strategy) << ": n=" << scores.size() << " overlap=";
    if (summary.overlap_coefficient) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", *summary.overlap_coefficient);
      out << buf;
    } else {
      out << "n/a";
    }
    out << "\n";
    wrote_any = true;
  }
  if (!wrote_any) {
    out << "error: dump contains no valid scores\n";
    return kExitDataViolation;
  }
  out << "wrote analysis files under " << report_dir.string() << "\n";
  return kExitOk;
}

namespace {

std::chrono::milliseconds ms(std::int64_t v) { return std::chrono::milliseconds(v); }

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"VLM reranking and evaluation harness for cross-view geolocalization"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file; flags override its values");

  // validate
  std::string validate_input;
  CLI::App* validate = app.add_subcommand(
      "validate", "check a candidate-list file against the schema");
  validate->add_option("input", validate_input, "candidate-list file (JSONL)")
      ->required();

  // rerank
  RunConfig run;
  std::string backend_name = "oracle";
  std::string strategy_name;
  std::int64_t timeout_ms = 30000, backoff_ms = 250;
  bool seed_set = false;
  std::int64_t max_image_dim = 0;
  CLI::App* rerank = app.add_subcommand("rerank", "rerank candidate lists");
  rerank->add_option("--input", run.input, "candidate-list file")->required();
  rerank->add_option("--output", run.output, "reranked results file")->required();
  rerank->add_option("--strategy", strategy_name,
                     "direct|likert|yesno|reason_yesno|pairwise")
      ->required();
  rerank->add_option("--backend", backend_name, "http|oracle|synthetic")
      ->check(CLI::IsMember({"http", "oracle", "synthetic"}))
      ->capture_default_str();
  rerank->add_option("--endpoint", run.gateway.endpoint_url,
                     "chat-completion endpoint URL (http backend)");
  rerank->add_option("--model", run.gateway.model_id, "model id (http backend)");
  rerank->add_option("--auth-env", run.gateway.auth_env_var,
                     "env var holding the bearer token (never a flag value)");
  rerank->add_option("--temperature", run.gateway.temperature)->capture_default_str();
  rerank->add_option("--max-tokens", run.gateway.max_output_tokens)
      ->capture_default_str();
  rerank->add_option("--top-logprobs", run.gateway.logprob_top_n)
      ->capture_default_str();
  rerank->add_option("--max-in-flight", run.gateway.max_in_flight)
      ->capture_default_str();
  rerank->add_option("--timeout-ms", timeout_ms)->capture_default_str();
  rerank->add_option("--retry-attempts", run.gateway.retry.max_attempts)
      ->capture_default_str();
  rerank->add_option("--retry-backoff-ms", backoff_ms)->capture_default_str();
  rerank->add_option("--images-root", run.gateway.images_root,
                     "prefix for relative image refs");
  rerank->add_option("--max-image-dim", max_image_dim,
                     "downscale images so max(w,h) <= this (0 = off)");
  rerank->add_option("--cache-dir", run.cache_dir,
                     "response cache directory (http backend)");
  rerank->add_option("--seed", run.seed, "top-level seed (oracle/synthetic)")
      ->each([&](const std::string&) { seed_set = true; });
  rerank->add_option("--oracle-p", run.oracle_p, "oracle flip probability")
      ->check(CLI::Range(0.0, 1.0));
  rerank->add_option("--regime", run.regime,
                     "constant|separated|overlapping|custom")
      ->check(CLI::IsMember({"constant", "separated", "overlapping", "custom"}))
      ->capture_default_str();
  rerank->add_option("--mu-correct", run.synthetic.mu_correct);
  rerank->add_option("--sigma-correct", run.synthetic.sigma_correct);
  rerank->add_option("--mu-incorrect", run.synthetic.mu_incorrect);
  rerank->add_option("--sigma-incorrect", run.synthetic.sigma_incorrect);
  rerank->add_option("--range-lo", run.synthetic.range_lo);
  rerank->add_option("--range-hi", run.synthetic.range_hi);
  rerank->add_flag("--swap-consistency", run.swap_consistency,
                   "issue each comparison twice with slots swapped");
  rerank->add_flag("--per-call-noise", run.per_call_noise,
                   "oracle flips drawn per call instead of per pair");
  rerank->add_option("--audit-log", run.audit_log,
                     "per-comparison audit log (JSONL)");
  rerank->add_option("--scores-dump", run.scores_dump,
                     "per-candidate score dump (JSONL)");
  rerank->add_option("--workers", run.workers, "worker pool size")
      ->capture_default_str();

  // eval
  std::string eval_pred, eval_input, report_dir = "reports";
  std::vector<int> eval_ks{1, 3, 5};
  CLI::App* eval = app.add_subcommand("eval", "compute Recall@k reports");
  eval->add_option("--pred", eval_pred, "reranked results file")->required();
  eval->add_option("--input", eval_input, "candidate-list file with truths")
      ->required();
  eval->add_option("--ks", eval_ks, "recall cutoffs")->capture_default_str();
  eval->add_option("--report-dir", report_dir)->capture_default_str();

  // simulate
  std::vector<double> grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  int trials = 100, sim_k = 20, n_queries = 20;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  std::string sim_report_dir = "reports";
  CLI::App* simulate =
      app.add_subcommand("simulate", "noise sweep over oracle flip probabilities");
  simulate->add_option("--grid", grid, "flip probabilities")->capture_default_str();
  simulate->add_option("--trials", trials, "oracle seeds per grid point")
      ->capture_default_str();
  simulate->add_option("--seed", sim_seed, "top-level seed")
      ->each([&](const std::string&) { sim_seed_set = true; });
  simulate->add_option("--K", sim_k, "candidates per query")->capture_default_str();
  simulate->add_option("--n-queries", n_queries)->capture_default_str();
  simulate->add_option("--report-dir", sim_report_dir)->capture_default_str();

  // analyze
  std::string analyze_dump, analyze_report_dir = "reports";
  CLI::App* analyze =
      app.add_subcommand("analyze", "score-distribution analysis of a dump");
  analyze->add_option("--scores", analyze_dump, "score dump (JSONL)")->required();
  analyze->add_option("--report-dir", analyze_report_dir)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitIoConfig;
  }

  if (validate->parsed()) return cmd_validate(validate_input, std::cout);

  if (rerank->parsed()) {
    run.backend = backend_name == "http"      ? BackendKind::http
                  : backend_name == "oracle"  ? BackendKind::oracle
                                              : BackendKind::synthetic;
    auto strategy = strategy_from_string(strategy_name);
    if (!strategy) {
      std::cout << "error: unknown strategy '" << strategy_name << "'\n";
      return kExitIoConfig;
    }
    run.strategy = *strategy;
    if (run.backend != BackendKind::http && !seed_set) {
      std::cout << "error: --seed is required for the "
                << backend_name << " backend\n";
      return kExitIoConfig;
    }
    run.gateway.timeout = ms(timeout_ms);
    run.gateway.retry.base_backoff = ms(backoff_ms);
    if (max_image_dim > 0) run.gateway.max_image_dim = static_cast<int>(max_image_dim);
    run.synthetic.regime = "custom";
    run.synthetic.seed = run.seed;
    return cmd_rerank(run, std::cout);
  }

  if (eval->parsed()) {
    return cmd_eval(eval_pred, eval_input, eval_ks, report_dir, std::cout);
  }
  if (simulate->parsed()) {
    if (!sim_seed_set) {
      std::cout << "error: --seed is required for simulate\n";
      return kExitIoConfig;
    }
    return cmd_simulate(grid, trials, sim_seed, sim_k, n_queries, sim_report_dir,
                        std::cout);
  }
  if (analyze->parsed()) {
    return cmd_analyze(analyze_dump, analyze_report_dir, std::cout);
  }
  return kExitIoConfig;
}

}  // namespace cvgl
