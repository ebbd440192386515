#include "cvgl/pairwise.hpp"

#include <json.hpp>

#include "cvgl/prompts.hpp"

namespace cvgl {

using nlohmann::json;

namespace {

std::optional<int> preference_from_json(const json& j) {
  if (!j.is_object()) return std::nullopt;
  auto it = j.find("preference");
  if (it == j.end()) return std::nullopt;
  if (it->is_string()) {
    const std::string& s = it->get_ref<const std::string&>();
    if (s == "1") return 1;
    if (s == "2") return 2;
    return std::nullopt;
  }
  if (it->is_number_integer()) {
    auto v = it->get<std::int64_t>();
    if (v == 1 || v == 2) return static_cast<int>(v);
  }
  return std::nullopt;
}

// Scans for a balanced {...} span starting at `start`; npos when unbalanced.
std::size_t balanced_object_end(std::string_view text, std::size_t start) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
    } else if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return std::string_view::npos;
}

}  // namespace

std::optional<int> parse_preference(std::string_view text) {
  json whole = json::parse(text, nullptr, false);
  if (!whole.is_discarded()) {
    if (auto p = preference_from_json(whole)) return p;
  }
  // Lenient: first well-formed {"preference": ...} object substring.
  for (std::size_t at = text.find('{'); at != std::string_view::npos;
       at = text.find('{', at + 1)) {
    std::size_t end = balanced_object_end(text, at);
    if (end == std::string_view::npos) continue;
    json j = json::parse(text.substr(at, end - at + 1), nullptr, false);
    if (j.is_discarded()) continue;
    if (auto p = preference_from_json(j)) return p;
  }
  return std::nullopt;
}

PreferenceOutcome VlmPairwiseJudge::operator()(const CandidateList& list,
                                               const AerialCandidate& first,
                                               const AerialCandidate& second) const {
  PreferenceOutcome outcome;
  outcome.presented_pair = {first.id, second.id};
  auto rank_fallback = [&] {
    outcome.winner = first.initial_rank <= second.initial_rank
                         ? PreferenceOutcome::Winner::first
                         : PreferenceOutcome::Winner::second;
  };

  VlmResponse resp;
  try {
    MultimodalMessage message = render_pairwise(list.query, first, second);
    resp = gateway_.cached_complete(message, /*want_logprobs=*/false);
  } catch (const std::exception& e) {
    outcome.raw_text = std::string("<error: ") + e.what() + ">";
    outcome.source = PreferenceOutcome::Source::fallback_error;
    rank_fallback();
    return outcome;
  }

  outcome.raw_text = resp.text;
  outcome.from_cache = resp.from_cache;
  outcome.latency_ms = resp.latency.count();
  if (auto p = parse_preference(resp.text)) {
    outcome.winner = *p == 1 ? PreferenceOutcome::Winner::first
                             : PreferenceOutcome::Winner::second;
    outcome.source = PreferenceOutcome::Source::model;
  } else {
    outcome.source = PreferenceOutcome::Source::fallback_parse;
    rank_fallback();
  }
  return outcome;
}

namespace {

struct SortState {
  const CandidateList& list;
  const PairwiseJudge& judge;
  const MergeSortOptions& options;
  RerankResult& result;
  std::vector<ComparisonAudit>* audit;

  // Invokes the judge once, tallying per-call diagnostics.
  PreferenceOutcome call(const AerialCandidate& first, const AerialCandidate& second) {
    PreferenceOutcome outcome = judge(list, first, second);
    ++result.comparator_calls;
    if (outcome.source == PreferenceOutcome::Source::fallback_parse) {
      ++result.diagnostics.parse_failures;
      ++result.diagnostics.fallbacks;
    } else if (outcome.source == PreferenceOutcome::Source::fallback_error) {
      ++result.diagnostics.fallbacks;
    }
    if (outcome.from_cache) ++result.diagnostics.cache_hits;
    if (audit) {
      audit->push_back({list.query.id, first.id, second.id, outcome.winner,
                        outcome.source, outcome.latency_ms});
    }
    return outcome;
  }

  // True when `left` should be emitted before `right`.
  bool prefers_left(const AerialCandidate& left, const AerialCandidate& right) {
    PreferenceOutcome forward = call(left, right);
    if (!options.swap_consistency) {
      return forward.winner == PreferenceOutcome::Winner::first;
    }
    PreferenceOutcome reversed = call(right, left);
    bool forward_model = forward.source == PreferenceOutcome::Source::model;
    bool reversed_model = reversed.source == PreferenceOutcome::Source::model;
    if (forward_model && reversed_model) {
      bool forward_left = forward.winner == PreferenceOutcome::Winner::first;
      bool reversed_left = reversed.winner == PreferenceOutcome::Winner::second;
      if (forward_left == reversed_left) return forward_left;
      ++result.diagnostics.fallbacks;  // slot-order disagreement
    }
    return left.initial_rank <= right.initial_rank;
  }

  void sort(std::vector<const AerialCandidate*>& run) {
    if (run.size() <= 1) return;
    std::size_t half = (run.size() + 1) / 2;  // left = first ceil(n/2)
    std::vector<const AerialCandidate*> left(run.begin(), run.begin() + half);
    std::vector<const AerialCandidate*> right(run.begin() + half, run.end());
    sort(left);
    sort(right);

    std::size_t li = 0, ri = 0, out = 0;
    while (li < left.size() && ri < right.size()) {
      if (prefers_left(*left[li], *right[ri])) {
        run[out++] = left[li++];
      } else {
        run[out++] = right[ri++];
      }
    }
    while (li < left.size()) run[out++] = left[li++];
    while (ri < right.size()) run[out++] = right[ri++];
  }
};

}  // namespace

RerankResult merge_sort_rerank(const CandidateList& list,
                               const PairwiseJudge& judge,
                               const MergeSortOptions& options,
                               std::vector<ComparisonAudit>* audit) {
  RerankResult result;
  result.query_id = list.query.id;
  result.strategy = StrategyId::pairwise;

  std::vector<const AerialCandidate*> run;
  run.reserve(list.candidates.size());
  for (const AerialCandidate& c : list.candidates) run.push_back(&c);

  SortState state{list, judge, options, result, audit};
  state.sort(run);

  result.order.reserve(run.size());
  for (const AerialCandidate* c : run) result.order.push_back(c->id);
  return result;
}

RerankResult merge_sort_rerank(const CandidateList& list,
                               const PairwiseJudge& judge,
                               const MergeSortOptions& options) {
  return merge_sort_rerank(list, judge, options, nullptr);
}

}  // namespace cvgl
