#include "cvgl/pointwise.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <stdexcept>

namespace cvgl {

std::optional<int> parse_direct_score(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      std::size_t start = i;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t len = i - start;
      if (len <= 3) {  // longer runs cannot be in [0, 100]
        int value = 0;
        for (std::size_t j = start; j < i; ++j) value = value * 10 + (text[j] - '0');
        if (value <= 100) return value;
      }
    } else {
      ++i;
    }
  }
  return std::nullopt;
}

std::optional<double> expected_likert(const TokenDistribution& dist) {
  double mass = 0.0;
  double weighted = 0.0;
  for (int k = 1; k <= 5; ++k) {
    double p = dist.at(std::to_string(k));
    mass += p;
    weighted += k * p;
  }
  if (mass <= 0.0) return std::nullopt;
  return weighted / mass;
}

std::optional<double> yes_probability(const TokenDistribution& dist) {
  double yes = dist.at("Yes");
  double no = dist.at("No");
  if (yes + no <= 0.0) return std::nullopt;
  return yes / (yes + no);
}

VlmPointwiseScorer::VlmPointwiseScorer(StrategyId strategy, VlmGateway& gateway)
    : strategy_(strategy), gateway_(gateway) {
  if (!is_pointwise(strategy)) {
    throw std::invalid_argument("pointwise scorer requires a pointwise strategy");
  }
}

PointwiseScore VlmPointwiseScorer::score(const GroundQuery& query,
                                         const AerialCandidate& candidate) {
  if (strategy_ == StrategyId::reason_yesno) {
    return score_reason_yesno(query, candidate);
  }

  MultimodalMessage message = render_pointwise(strategy_, query, candidate);
  PointwiseScore out;
  out.candidate_id = candidate.id;
  out.strategy = strategy_;

  if (strategy_ == StrategyId::direct) {
    VlmResponse resp = gateway_.cached_complete(message, /*want_logprobs=*/false);
    out.raw_text = resp.text;
    out.from_cache = resp.from_cache;
    if (auto v = parse_direct_score(resp.text)) {
      out.value = *v;
      out.valid = true;
    }
    return out;
  }

  VlmResponse resp = gateway_.cached_complete(message, /*want_logprobs=*/true);
  out.raw_text = resp.text;
  out.from_cache = resp.from_cache;
  if (strategy_ == StrategyId::likert) {
    TokenDistribution dist =
        extract_token_probs(resp, {"1", "2", "3", "4", "5"});
    if (auto v = expected_likert(dist)) {
      out.value = *v;
      out.valid = true;
    }
  } else {
    TokenDistribution dist = extract_token_probs(resp, {"Yes", "No"});
    if (auto v = yes_probability(dist)) {
      out.value = *v;
      out.valid = true;
    }
  }
  return out;
}

PointwiseScore VlmPointwiseScorer::score_reason_yesno(
    const GroundQuery& query, const AerialCandidate& candidate) {
  MultimodalMessage prompt =
      render_pointwise(StrategyId::reason_yesno, query, candidate);

  // Turn 1: free-form reasoning. Turn 2 appends the reasoning and asks for a
  // bare Yes/No so the answer token sits at a known logprob position.
  VlmResponse reasoning = gateway_.cached_complete(prompt, /*want_logprobs=*/false);

  MultimodalMessage reasoning_msg;
  reasoning_msg.parts.push_back(
      {MessagePart::Kind::text, reasoning.text, "", ""});
  MultimodalMessage followup;
  followup.parts.push_back(
      {MessagePart::Kind::text, reason_followup_instruction(), "", ""});

  std::vector<ChatTurn> turns{{"user", prompt},
                              {"assistant", reasoning_msg},
                              {"user", followup}};
  VlmResponse answer = gateway_.cached_complete(turns, /*want_logprobs=*/true);

  PointwiseScore out;
  out.candidate_id = candidate.id;
  out.strategy = StrategyId::reason_yesno;
  out.raw_text = answer.text;
  out.from_cache = reasoning.from_cache && answer.from_cache;
  TokenDistribution dist = extract_token_probs(answer, {"Yes", "No"});
  if (auto v = yes_probability(dist)) {
    out.value = *v;
    out.valid = true;
  }
  return out;
}

RerankResult rerank_pointwise(const CandidateList& list,
                              const std::vector<PointwiseScore>& scores) {
  std::map<std::string, const PointwiseScore*> by_id;
  for (const PointwiseScore& s : scores) by_id[s.candidate_id] = &s;

  struct Entry {
    const AerialCandidate* candidate;
    const PointwiseScore* score;
  };
  std::vector<Entry> entries;
  entries.reserve(list.candidates.size());
  for (const AerialCandidate& c : list.candidates) {
    auto it = by_id.find(c.id);
    if (it == by_id.end()) {
      throw std::invalid_argument("missing score for candidate '" + c.id + "'");
    }
    entries.push_back({&c, it->second});
  }

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.score->valid != b.score->valid) return a.score->valid;
    if (a.score->valid && a.score->value != b.score->value) {
      return a.score->value > b.score->value;
    }
    return a.candidate->initial_rank < b.candidate->initial_rank;
  });

  RerankResult result;
  result.query_id = list.query.id;
  result.strategy = scores.empty() ? StrategyId::direct : scores.front().strategy;
  result.comparator_calls = 0;
  std::vector<std::optional<double>> ordered_scores;
  for (const Entry& e : entries) {
    result.order.push_back(e.candidate->id);
    ordered_scores.push_back(e.score->valid ? std::optional<double>(e.score->value)
                                            : std::nullopt);
    if (!e.score->valid) {
      ++result.diagnostics.parse_failures;
      ++result.diagnostics.fallbacks;
    }
    if (e.score->from_cache) ++result.diagnostics.cache_hits;
  }
  result.scores = std::move(ordered_scores);
  return result;
}

}  // namespace cvgl
