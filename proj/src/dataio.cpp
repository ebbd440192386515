#include "cvgl/dataio.hpp"

#include <unistd.h>

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cvgl {

using nlohmann::json;

std::optional<StrategyId> strategy_from_string(std::string_view name) {
  for (StrategyId s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

ValidationReport validate_candidate_list(const CandidateList& list) {
  ValidationReport report;
  auto violate = [&](std::string field, std::string message) {
    report.ok = false;
    report.violations.push_back({std::move(field), std::move(message)});
  };

  if (list.query.id.empty()) violate("query_id", "must be non-empty");
  if (list.query.image_ref.empty()) violate("query_image", "must be non-empty");
  if (list.k != static_cast<int>(list.candidates.size())) {
    violate("k", "length mismatch: k=" + std::to_string(list.k) + " but " +
                     std::to_string(list.candidates.size()) + " candidates");
  }

  std::set<std::string> seen;
  for (std::size_t i = 0; i < list.candidates.size(); ++i) {
    const AerialCandidate& c = list.candidates[i];
    if (c.id.empty()) {
      violate("candidates[" + std::to_string(i) + "].id", "must be non-empty");
    } else if (!seen.insert(c.id).second) {
      violate("candidates[" + std::to_string(i) + "].id",
              "duplicate candidate id '" + c.id + "'");
    }
    if (c.image_ref.empty()) {
      violate("candidates[" + std::to_string(i) + "].image", "must be non-empty");
    }
    int expected = static_cast<int>(i) + 1;
    if (c.initial_rank != expected) {
      violate("candidates[" + std::to_string(i) + "].rank",
              "rank " + std::to_string(c.initial_rank) + " at position " +
                  std::to_string(i) + ", expected " + std::to_string(expected));
    }
  }

  if (list.ground_truth_id.has_value()) {
    report.gt_absent = !seen.contains(*list.ground_truth_id);
  }
  return report;
}

namespace {

CandidateList parse_candidate_line(const json& j, int line) {
  auto require = [&](const char* field) -> const json& {
    auto it = j.find(field);
    if (it == j.end()) throw SchemaError(line, field, "missing field");
    return *it;
  };
  auto as_string = [&](const json& v, const char* field) -> std::string {
    if (!v.is_string()) throw SchemaError(line, field, "expected a string");
    return v.get<std::string>();
  };

  if (!j.is_object()) throw SchemaError(line, "record", "expected an object");

  CandidateList list;
  list.query.id = as_string(require("query_id"), "query_id");
  list.query.image_ref = as_string(require("query_image"), "query_image");

  if (auto it = j.find("ground_truth_id"); it != j.end() && !it->is_null()) {
    list.ground_truth_id = as_string(*it, "ground_truth_id");
  }

  const json& cands = require("candidates");
  if (!cands.is_array()) throw SchemaError(line, "candidates", "expected an array");
  list.candidates.reserve(cands.size());
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const json& cj = cands[i];
    std::string where = "candidates[" + std::to_string(i) + "]";
    if (!cj.is_object()) throw SchemaError(line, where, "expected an object");
    AerialCandidate c;
    auto cit = cj.find("id");
    if (cit == cj.end()) throw SchemaError(line, where + ".id", "missing field");
    c.id = as_string(*cit, (where + ".id").c_str());
    cit = cj.find("image");
    if (cit == cj.end()) throw SchemaError(line, where + ".image", "missing field");
    c.image_ref = as_string(*cit, (where + ".image").c_str());
    cit = cj.find("rank");
    if (cit == cj.end() || !cit->is_number_integer()) {
      throw SchemaError(line, where + ".rank", "missing or non-integer rank");
    }
    c.initial_rank = cit->get<int>();
    if (cit = cj.find("score"); cit != cj.end() && !cit->is_null()) {
      if (!cit->is_number()) throw SchemaError(line, where + ".score", "expected a number");
      c.retrieval_score = cit->get<double>();
    }
    list.candidates.push_back(std::move(c));
  }
  list.k = static_cast<int>(list.candidates.size());
  return list;
}

json candidate_list_to_json(const CandidateList& list) {
  json j;
  j["query_id"] = list.query.id;
  j["query_image"] = list.query.image_ref;
  j["ground_truth_id"] =
      list.ground_truth_id ? json(*list.ground_truth_id) : json(nullptr);
  json cands = json::array();
  for (const AerialCandidate& c : list.candidates) {
    json cj;
    cj["id"] = c.id;
    cj["image"] = c.image_ref;
    cj["rank"] = c.initial_rank;
    cj["score"] = c.retrieval_score ? json(*c.retrieval_score) : json(nullptr);
    cands.push_back(std::move(cj));
  }
  j["candidates"] = std::move(cands);
  return j;
}

template <typename PerLine>
void for_each_line(const std::filesystem::path& path, PerLine&& fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    fn(lineno, line);
  }
  if (in.bad()) throw std::runtime_error("IO error reading " + path.string());
}

}  // namespace

std::vector<CandidateList> load_candidates(const std::filesystem::path& path) {
  std::vector<CandidateList> out;
  for_each_line(path, [&](int lineno, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError(lineno, "record", "invalid JSON");
    CandidateList list = parse_candidate_line(j, lineno);
    ValidationReport report = validate_candidate_list(list);
    if (!report.ok) {
      const ValidationIssue& v = report.violations.front();
      throw SchemaError(lineno, v.field, v.message);
    }
    out.push_back(std::move(list));
  });
  return out;
}

LenientLoadResult load_candidates_lenient(const std::filesystem::path& path) {
  LenientLoadResult out;
  for_each_line(path, [&](int lineno, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      out.issues.push_back({lineno, "", "record", "invalid JSON"});
      return;
    }
    CandidateList list;
    try {
      list = parse_candidate_line(j, lineno);
    } catch (const SchemaError& e) {
      std::string qid = j.is_object() && j.contains("query_id") && j["query_id"].is_string()
                            ? j["query_id"].get<std::string>()
                            : "";
      out.issues.push_back({lineno, qid, e.field(), e.what()});
      return;
    }
    ValidationReport report = validate_candidate_list(list);
    for (const ValidationIssue& v : report.violations) {
      out.issues.push_back({lineno, list.query.id, v.field, v.message});
    }
    out.lists.push_back(std::move(list));
  });
  return out;
}

void save_candidates(const std::vector<CandidateList>& lists,
                     const std::filesystem::path& path) {
  std::string content;
  for (const CandidateList& list : lists) {
    content += candidate_list_to_json(list).dump();
    content += '\n';
  }
  atomic_write_file(path, content);
}

std::string result_to_json_line(const RerankResult& r) {
  json j;
  j["query_id"] = r.query_id;
  j["strategy"] = std::string(to_string(r.strategy));
  j["order"] = r.order;
  if (r.scores.has_value()) {
    json arr = json::array();
    for (const auto& s : *r.scores) arr.push_back(s ? json(*s) : json(nullptr));
    j["scores"] = std::move(arr);
  } else {
    j["scores"] = nullptr;
  }
  j["comparator_calls"] = r.comparator_calls;
  // cache_hits is run telemetry, not result content: a warm-cache rerun must
  // reproduce the output file byte for byte, so it is not persisted.
  j["diagnostics"] = {{"parse_failures", r.diagnostics.parse_failures},
                      {"fallbacks", r.diagnostics.fallbacks}};
  return j.dump();
}

void save_results(const std::vector<RerankResult>& results,
                  const std::filesystem::path& path) {
  std::string content;
  for (const RerankResult& r : results) {
    std::set<std::string> unique(r.order.begin(), r.order.end());
    if (unique.size() != r.order.size()) {
      throw std::invalid_argument("result for query '" + r.query_id +
                                  "': order contains duplicate ids and cannot "
                                  "be a permutation");
    }
    if (r.scores && r.scores->size() != r.order.size()) {
      throw std::invalid_argument("result for query '" + r.query_id +
                                  "': scores length does not match order");
    }
    content += result_to_json_line(r);
    content += '\n';
  }
  atomic_write_file(path, content);
}

std::vector<RerankResult> load_results(const std::filesystem::path& path) {
  std::vector<RerankResult> out;
  for_each_line(path, [&](int lineno, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError(lineno, "record", "invalid JSON");
    if (!j.is_object()) throw SchemaError(lineno, "record", "expected an object");
    RerankResult r;
    try {
      r.query_id = j.at("query_id").get<std::string>();
      auto strategy = strategy_from_string(j.at("strategy").get<std::string>());
      if (!strategy) throw SchemaError(lineno, "strategy", "unknown strategy");
      r.strategy = *strategy;
      r.order = j.at("order").get<std::vector<std::string>>();
      const json& scores = j.at("scores");
      if (!scores.is_null()) {
        std::vector<std::optional<double>> vals;
        for (const json& s : scores) {
          vals.push_back(s.is_null() ? std::nullopt
                                     : std::optional<double>(s.get<double>()));
        }
        r.scores = std::move(vals);
      }
      r.comparator_calls = j.at("comparator_calls").get<std::int64_t>();
      const json& d = j.at("diagnostics");
      r.diagnostics.parse_failures = d.at("parse_failures").get<std::int64_t>();
      r.diagnostics.fallbacks = d.at("fallbacks").get<std::int64_t>();
    } catch (const json::exception& e) {
      throw SchemaError(lineno, "record", e.what());
    }
    out.push_back(std::move(r));
  });
  return out;
}

void atomic_write_file(const std::filesystem::path& path,
                       std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("IO error writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error("IO error reading " + path.string());
  return ss.str();
}

}  // namespace cvgl
