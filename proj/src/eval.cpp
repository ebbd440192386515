#include "cvgl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "cvgl/dataio.hpp"
#include "cvgl/simbackend.hpp"

namespace cvgl {

using nlohmann::json;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

TruthMap truths_from_candidates(const std::vector<CandidateList>& lists) {
  TruthMap truths;
  for (const CandidateList& list : lists) {
    truths[list.query.id] = list.ground_truth_id;
  }
  return truths;
}

EvalReport recall_at_k(const std::vector<RerankResult>& results,
                       const TruthMap& truths, std::vector<int> ks) {
  if (results.empty()) throw std::invalid_argument("no results to evaluate");
  for (int k : ks) {
    if (k < 1) throw std::invalid_argument("recall needs k >= 1");
  }
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());

  EvalReport report;
  report.strategy = results.front().strategy;
  report.n_queries = static_cast<std::int64_t>(results.size());
  for (int k : ks) report.recalls.push_back({k, 0, 0.0});

  std::int64_t total_calls = 0;
  for (const RerankResult& r : results) {
    if (r.strategy != report.strategy) {
      throw std::invalid_argument("mixed strategies in one evaluation");
    }
    auto truth = truths.find(r.query_id);
    if (truth == truths.end()) {
      throw std::invalid_argument("no truth entry for query '" + r.query_id + "'");
    }
    // Absent ground truth (or none recorded) misses at every k.
    std::size_t pos = std::numeric_limits<std::size_t>::max();
    if (truth->second) {
      auto it = std::find(r.order.begin(), r.order.end(), *truth->second);
      if (it != r.order.end()) pos = static_cast<std::size_t>(it - r.order.begin());
    }
    for (KRecall& kr : report.recalls) {
      if (pos < static_cast<std::size_t>(kr.k)) ++kr.hits;
    }
    total_calls += r.comparator_calls;
    report.max_comparator_calls =
        std::max(report.max_comparator_calls, r.comparator_calls);
    report.diagnostics += r.diagnostics;
  }
  for (KRecall& kr : report.recalls) {
    kr.recall = 100.0 * static_cast<double>(kr.hits) / report.n_queries;
  }
  report.mean_comparator_calls =
      static_cast<double>(total_calls) / report.n_queries;
  return report;
}

namespace {

ClassStats stats_for(const std::vector<double>& values, double lo, double hi) {
  ClassStats stats;
  stats.count = static_cast<std::int64_t>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  stats.mean = sum / values.size();
  double sq = 0.0;
  for (double v : values) sq += (v - stats.mean) * (v - stats.mean);
  stats.stddev = std::sqrt(sq / values.size());

  double width = (hi - lo) / kHistogramBins;
  for (double v : values) {
    int bin = static_cast<int>(std::floor((v - lo) / width));
    bin = std::clamp(bin, 0, kHistogramBins - 1);
    stats.histogram[bin] += 1.0;
  }
  for (double& h : stats.histogram) h /= values.size();
  return stats;
}

}  // namespace

ScoreDistributionSummary class_stats(
    const std::vector<std::pair<double, bool>>& scores, double range_lo,
    double range_hi) {
  if (!(range_lo < range_hi)) {
    throw std::invalid_argument("degenerate score range");
  }
  std::vector<double> correct, incorrect;
  for (const auto& [value, is_gt] : scores) {
    (is_gt ? correct : incorrect).push_back(value);
  }

  ScoreDistributionSummary summary;
  summary.range_lo = range_lo;
  summary.range_hi = range_hi;
  if (!correct.empty()) summary.correct = stats_for(correct, range_lo, range_hi);
  if (!incorrect.empty()) {
    summary.incorrect = stats_for(incorrect, range_lo, range_hi);
  }
  if (summary.correct && summary.incorrect) {
    double overlap = 0.0;
    for (int b = 0; b < kHistogramBins; ++b) {
      overlap += std::min(summary.correct->histogram[b],
                          summary.incorrect->histogram[b]);
    }
    summary.overlap_coefficient = overlap;
  }
  return summary;
}

namespace {

json report_to_json_obj(const EvalReport& r) {
  json recalls = json::array();
  for (const KRecall& kr : r.recalls) {
    recalls.push_back({{"k", kr.k}, {"hits", kr.hits}, {"recall", kr.recall}});
  }
  return {{"strategy", std::string(to_string(r.strategy))},
          {"n_queries", r.n_queries},
          {"recalls", std::move(recalls)},
          {"mean_comparator_calls", r.mean_comparator_calls},
          {"max_comparator_calls", r.max_comparator_calls},
          {"diagnostics",
           {{"parse_failures", r.diagnostics.parse_failures},
            {"fallbacks", r.diagnostics.fallbacks},
            {"cache_hits", r.diagnostics.cache_hits}}}};
}

}  // namespace

std::string reports_to_json(const std::vector<EvalReport>& reports) {
  json arr = json::array();
  for (const EvalReport& r : reports) arr.push_back(report_to_json_obj(r));
  return arr.dump(2) + "\n";
}

std::vector<EvalReport> reports_from_json(const std::string& bytes) {
  json arr = json::parse(bytes);
  std::vector<EvalReport> out;
  for (const json& j : arr) {
    EvalReport r;
    auto strategy = strategy_from_string(j.at("strategy").get<std::string>());
    if (!strategy) throw std::invalid_argument("unknown strategy in report");
    r.strategy = *strategy;
    r.n_queries = j.at("n_queries").get<std::int64_t>();
    for (const json& kr : j.at("recalls")) {
      r.recalls.push_back({kr.at("k").get<int>(), kr.at("hits").get<std::int64_t>(),
                           kr.at("recall").get<double>()});
    }
    r.mean_comparator_calls = j.at("mean_comparator_calls").get<double>();
    r.max_comparator_calls = j.at("max_comparator_calls").get<std::int64_t>();
    const json& d = j.at("diagnostics");
    r.diagnostics.parse_failures = d.at("parse_failures").get<std::int64_t>();
    r.diagnostics.fallbacks = d.at("fallbacks").get<std::int64_t>();
    r.diagnostics.cache_hits = d.at("cache_hits").get<std::int64_t>();
    out.push_back(std::move(r));
  }
  return out;
}

std::string reports_to_csv(const std::vector<EvalReport>& reports) {
  std::string out = "strategy";
  if (!reports.empty()) {
    for (const KRecall& kr : reports.front().recalls) {
      out += ",R@" + std::to_string(kr.k);
    }
  } else {
    out += ",R@1,R@3,R@5";
  }
  out += ",n,mean_calls,max_calls,parse_failures\n";
  for (const EvalReport& r : reports) {
    out += std::string(to_string(r.strategy));
    for (const KRecall& kr : r.recalls) out += "," + fmt("%.2f", kr.recall);
    out += "," + std::to_string(r.n_queries);
    out += "," + fmt("%.2f", r.mean_comparator_calls);
    out += "," + std::to_string(r.max_comparator_calls);
    out += "," + std::to_string(r.diagnostics.parse_failures);
    out += "\n";
  }
  return out;
}

namespace {

json class_stats_to_json(const std::optional<ClassStats>& stats) {
  if (!stats) return nullptr;
  json hist = json::array();
  for (double h : stats->histogram) hist.push_back(h);
  return {{"count", stats->count},
          {"mean", stats->mean},
          {"stddev", stats->stddev},
          {"histogram", std::move(hist)}};
}

}  // namespace

std::string summary_to_json(const ScoreDistributionSummary& summary) {
  json j = {{"strategy", std::string(to_string(summary.strategy))},
            {"range_lo", summary.range_lo},
            {"range_hi", summary.range_hi},
            {"correct", class_stats_to_json(summary.correct)},
            {"incorrect", class_stats_to_json(summary.incorrect)},
            {"overlap_coefficient", summary.overlap_coefficient
                                        ? json(*summary.overlap_coefficient)
                                        : json(nullptr)}};
  return j.dump(2) + "\n";
}

namespace {

constexpr double kSvgW = 720.0, kSvgH = 420.0;
constexpr double kLeft = 60.0, kRight = 20.0, kTop = 48.0, kBottom = 44.0;

void svg_bars(std::string& out, const ClassStats& stats, const char* color) {
  double plot_w = kSvgW - kLeft - kRight;
  double plot_h = kSvgH - kTop - kBottom;
  double bar_w = plot_w / kHistogramBins;
  for (int b = 0; b < kHistogramBins; ++b) {
    double h = stats.histogram[b] * plot_h;
    out += "  <rect x=\"" + fmt("%.2f", kLeft + b * bar_w) + "\" y=\"" +
           fmt("%.2f", kTop + plot_h - h) + "\" width=\"" + fmt("%.2f", bar_w) +
           "\" height=\"" + fmt("%.2f", h) + "\" fill=\"" + color +
           "\" fill-opacity=\"0.55\"/>\n";
  }
}

}  // namespace

std::string histogram_svg(const ScoreDistributionSummary& summary) {
  double plot_h = kSvgH - kTop - kBottom;
  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", kSvgW) +
         "\" height=\"" + fmt("%.0f", kSvgH) + "\" viewBox=\"0 0 " +
         fmt("%.0f", kSvgW) + " " + fmt("%.0f", kSvgH) + "\">\n";
  out += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "  <text x=\"" + fmt("%.0f", kSvgW / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\">score distribution (" +
         std::string(to_string(summary.strategy)) + ")" +
         (summary.overlap_coefficient
              ? ", overlap " + fmt("%.4f", *summary.overlap_coefficient)
              : std::string()) +
         "</text>\n";
  if (summary.incorrect) svg_bars(out, *summary.incorrect, "#d95f02");
  if (summary.correct) svg_bars(out, *summary.correct, "#1f78b4");
  // Axes and range labels.
  out += "  <line x1=\"" + fmt("%.0f", kLeft) + "\" y1=\"" + fmt("%.0f", kTop + plot_h) +
         "\" x2=\"" + fmt("%.0f", kSvgW - kRight) + "\" y2=\"" +
         fmt("%.0f", kTop + plot_h) + "\" stroke=\"black\"/>\n";
  out += "  <line x1=\"" + fmt("%.0f", kLeft) + "\" y1=\"" + fmt("%.0f", kTop) +
         "\" x2=\"" + fmt("%.0f", kLeft) + "\" y2=\"" + fmt("%.0f", kTop + plot_h) +
         "\" stroke=\"black\"/>\n";
  out += "  <text x=\"" + fmt("%.0f", kLeft) + "\" y=\"" + fmt("%.0f", kSvgH - 22) +
         "\" font-family=\"sans-serif\" font-size=\"12\">" +
         fmt("%g", summary.range_lo) + "</text>\n";
  out += "  <text x=\"" + fmt("%.0f", kSvgW - kRight) + "\" y=\"" +
         fmt("%.0f", kSvgH - 22) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
         fmt("%g", summary.range_hi) + "</text>\n";
  // Legend with per-class counts.
  auto legend_line = [&](double y, const char* color, const std::string& label) {
    out += "  <rect x=\"" + fmt("%.0f", kLeft + 8) + "\" y=\"" + fmt("%.0f", y - 10) +
           "\" width=\"12\" height=\"12\" fill=\"" + color +
           "\" fill-opacity=\"0.55\"/>\n";
    out += "  <text x=\"" + fmt("%.0f", kLeft + 26) + "\" y=\"" + fmt("%.0f", y) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + label + "</text>\n";
  };
  legend_line(kTop + 16, "#1f78b4",
              summary.correct
                  ? "correct (n=" + std::to_string(summary.correct->count) + ")"
                  : "correct (none)");
  legend_line(kTop + 34, "#d95f02",
              summary.incorrect
                  ? "incorrect (n=" + std::to_string(summary.incorrect->count) + ")"
                  : "incorrect (none)");
  out += "</svg>\n";
  return out;
}

void save_score_dump(const std::vector<ScoreRecord>& records,
                     const std::filesystem::path& path) {
  std::string content;
  for (const ScoreRecord& r : records) {
    json j = {{"query_id", r.query_id},
              {"candidate_id", r.candidate_id},
              {"strategy", std::string(to_string(r.strategy))},
              {"value", r.value ? json(*r.value) : json(nullptr)},
              {"valid", r.valid},
              {"is_ground_truth", r.is_ground_truth}};
    content += j.dump();
    content += '\n';
  }
  atomic_write_file(path, content);
}

std::vector<ScoreRecord> load_score_dump(const std::filesystem::path& path) {
  std::vector<ScoreRecord> out;
  std::string bytes = read_file(path);
  std::size_t start = 0;
  int lineno = 0;
  while (start < bytes.size()) {
    std::size_t end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    ++lineno;
    std::string_view line(bytes.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError(lineno, "record", "invalid JSON");
    try {
      ScoreRecord r;
      r.query_id = j.at("query_id").get<std::string>();
      r.candidate_id = j.at("candidate_id").get<std::string>();
      auto strategy = strategy_from_string(j.at("strategy").get<std::string>());
      if (!strategy) throw SchemaError(lineno, "strategy", "unknown strategy");
      r.strategy = *strategy;
      if (const json& v = j.at("value"); !v.is_null()) r.value = v.get<double>();
      r.valid = j.at("valid").get<bool>();
      r.is_ground_truth = j.at("is_ground_truth").get<bool>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw SchemaError(lineno, "record", e.what());
    }
  }
  return out;
}

std::pair<double, double> strategy_score_range(StrategyId strategy) {
  switch (strategy) {
    case StrategyId::direct: return {0.0, 100.0};
    case StrategyId::likert: return {1.0, 5.0};
    case StrategyId::yesno:
    case StrategyId::reason_yesno:
    case StrategyId::pairwise: return {0.0, 1.0};
  }
  return {0.0, 1.0};
}

std::string sweep_to_csv(const std::vector<NoiseSweepRow>& rows) {
  std::string out = "p,R@1,R@3,R@5,mean_calls\n";
  for (const NoiseSweepRow& r : rows) {
    out += fmt("%.3f", r.p) + "," + fmt("%.2f", r.r1) + "," + fmt("%.2f", r.r3) +
           "," + fmt("%.2f", r.r5) + "," + fmt("%.2f", r.mean_calls) + "\n";
  }
  return out;
}

std::string sweep_to_json(const std::vector<NoiseSweepRow>& rows) {
  json arr = json::array();
  for (const NoiseSweepRow& r : rows) {
    arr.push_back({{"p", r.p},
                   {"r1", r.r1},
                   {"r3", r.r3},
                   {"r5", r.r5},
                   {"mean_calls", r.mean_calls}});
  }
  return arr.dump(2) + "\n";
}

std::string sweep_svg(const std::vector<NoiseSweepRow>& rows) {
  double plot_w = kSvgW - kLeft - kRight;
  double plot_h = kSvgH - kTop - kBottom;
  double p_max = 0.0;
  for (const NoiseSweepRow& r : rows) p_max = std::max(p_max, r.p);
  if (p_max <= 0.0) p_max = 1.0;

  auto x_of = [&](double p) { return kLeft + p / p_max * plot_w; };
  auto y_of = [&](double r) { return kTop + (100.0 - r) / 100.0 * plot_h; };

  std::string out;
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", kSvgW) +
         "\" height=\"" + fmt("%.0f", kSvgH) + "\" viewBox=\"0 0 " +
         fmt("%.0f", kSvgW) + " " + fmt("%.0f", kSvgH) + "\">\n";
  out += "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += "  <text x=\"" + fmt("%.0f", kSvgW / 2) +
         "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"15\">recall vs comparator flip probability</text>\n";
  out += "  <line x1=\"" + fmt("%.0f", kLeft) + "\" y1=\"" + fmt("%.0f", kTop + plot_h) +
         "\" x2=\"" + fmt("%.0f", kSvgW - kRight) + "\" y2=\"" +
         fmt("%.0f", kTop + plot_h) + "\" stroke=\"black\"/>\n";
  out += "  <line x1=\"" + fmt("%.0f", kLeft) + "\" y1=\"" + fmt("%.0f", kTop) +
         "\" x2=\"" + fmt("%.0f", kLeft) + "\" y2=\"" + fmt("%.0f", kTop + plot_h) +
         "\" stroke=\"black\"/>\n";

  struct Series {
    const char* color;
    const char* label;
    double NoiseSweepRow::* field;
  };
  const Series series[] = {{"#1f78b4", "R@1", &NoiseSweepRow::r1},
                           {"#33a02c", "R@3", &NoiseSweepRow::r3},
                           {"#d95f02", "R@5", &NoiseSweepRow::r5}};
  double legend_y = kTop + 16;
  for (const Series& s : series) {
    std::string points;
    for (const NoiseSweepRow& r : rows) {
      points += fmt("%.2f", x_of(r.p)) + "," + fmt("%.2f", y_of(r.*(s.field))) + " ";
    }
    out += "  <polyline fill=\"none\" stroke=\"" + std::string(s.color) +
           "\" stroke-width=\"2\" points=\"" + points + "\"/>\n";
    out += "  <text x=\"" + fmt("%.0f", kSvgW - kRight - 60) + "\" y=\"" +
           fmt("%.0f", legend_y) + "\" font-family=\"sans-serif\" font-size=\"12\" "
           "fill=\"" + s.color + "\">" + s.label + "</text>\n";
    legend_y += 18;
  }
  for (const NoiseSweepRow& r : rows) {
    out += "  <text x=\"" + fmt("%.2f", x_of(r.p)) + "\" y=\"" +
           fmt("%.0f", kSvgH - 22) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"11\">" + fmt("%.2f", r.p) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace cvgl
