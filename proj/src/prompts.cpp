#include "cvgl/prompts.hpp"

#include <stdexcept>

namespace cvgl {

namespace {

// Templates transcribed verbatim; the fixture files under prompts/ are the
// drift check. Do not edit one without the other.

const std::string kDirectTemplate = R"PROMPT(You are an expert geospatial analyst. Your task is to determine the best satellite image match for a ground-level query panorama. Here is the ground-level panorama query image:

'<GROUNDIMAGE>'

Here is a candidate satellite image:

'<AERIALIMAGE>'

Carefully analyze the ground-level query image and compare it to satellite image. Focus on key cross-view features like road network, building arrangement, and landmarks. Evaluate if the satellite image corresponds to the location shown in the ground-level panorama. Provide a confidence score between 0 (no match) and 100 (perfect match). Respond ONLY with the score.)PROMPT";

const std::string kYesNoTemplate = R"PROMPT(You are an expert geospatial analyst. Your task is to determine the best satellite image match for a ground-level query panorama. Here is the ground-level panorama query image:

'<GROUNDIMAGE>'

Here is a candidate satellite image:

'<AERIALIMAGE>'

Carefully analyze the ground-level query image and compare it to satellite image. Focus on key cross-view features like road network, building arrangement, and landmarks. Based on this comparison does the satellite image accurately match the location shown in the ground-level panorama? Answer ONLY with the single word ‘Yes’ or ‘No’.)PROMPT";

const std::string kLikertTemplate = R"PROMPT(You are an expert geospatial analyst. Your task is to determine the best satellite image match for a ground-level query panorama. Here is the ground-level panorama query image:

'<GROUNDIMAGE>'

Here is a candidate satellite image:

'<AERIALIMAGE>'

Carefully analyze the ground-level query image and compare it to satellite image. Focus on key cross-view features like road network, building arrangement, and landmarks On a scale of 1 (no match) to 5 (perfect match), how well does the satellite image match the location in the ground-level panorama? Respond ONLY with a single digit (1, 2, 3, 4, or 5).)PROMPT";

const std::string kReasonYesNoTemplate = R"PROMPT(You are an expert geospatial analyst. Your task is to determine the best satellite image match for a ground-level query panorama. Here is the ground-level panorama query image:

'<GROUNDIMAGE>'

Here is a candidate satellite image:

'<AERIALIMAGE>'

Carefully analyze the ground-level query image and compare it to satellite image. Focus on key cross-view features like road network, building arrangement, and landmarks. Provide a detailed step-by-step reasoning comparing key visual features (e.g., road layout, building shapes, relative positions, landmarks). Explain your conclusion. Based on the reasoning about the match between the two images. Concisely, does the satellite image match the ground-level panorama? Answer ONLY with the single word 'Yes' or 'No'.)PROMPT";

const std::string kPairwiseTemplate = R"PROMPT(You are an expert geospatial analyst. Your task is to determine the best satellite image match for a ground-level query panorama. Here is the ground-level panorama query image

'<GROUNDIMAGE>'

Here is satellite image 1:

'<AERIALIMAGE1>'

Here is satellite image 2:

'<AERIALIMAGE2>'

Carefully analyze the ground-level query image and compare it to both candidate satellite images. Focus on key cross-view features like road network, building arrangement, and landmarks Based on this comparison, which satellite image (1 or 2) provides the better geospatial match? Respond ONLY with a JSON object indicating the preferred image number (1 or 2), like this: {"preference": "<1 or 2>"})PROMPT";

const std::string kReasonFollowup =
    "Based on the reasoning above, answer ONLY with the single word 'Yes' or "
    "'No'.";

struct Slot {
  std::string placeholder;
  std::string image_ref;
};

MultimodalMessage split_at_placeholders(const std::string& tmpl,
                                        const std::vector<Slot>& slots) {
  MultimodalMessage msg;
  std::size_t pos = 0;
  for (const Slot& slot : slots) {
    std::size_t at = tmpl.find(slot.placeholder, pos);
    if (at == std::string::npos) {
      throw std::logic_error("template missing placeholder " + slot.placeholder);
    }
    if (at > pos) {
      msg.parts.push_back({MessagePart::Kind::text, tmpl.substr(pos, at - pos), "", ""});
    }
    msg.parts.push_back({MessagePart::Kind::image, "", slot.image_ref, slot.placeholder});
    pos = at + slot.placeholder.size();
  }
  if (pos < tmpl.size()) {
    msg.parts.push_back({MessagePart::Kind::text, tmpl.substr(pos), "", ""});
  }
  return msg;
}

void require_ref(const std::string& ref, const char* what) {
  if (ref.empty()) {
    throw std::invalid_argument(std::string("unresolvable image reference: ") +
                                what + " is empty");
  }
}

}  // namespace

std::string MultimodalMessage::text_only() const {
  std::string out;
  for (const MessagePart& p : parts) {
    if (p.kind == MessagePart::Kind::text) out += p.text;
  }
  return out;
}

std::string MultimodalMessage::text_with_placeholders() const {
  std::string out;
  for (const MessagePart& p : parts) {
    out += p.kind == MessagePart::Kind::text ? p.text : p.placeholder;
  }
  return out;
}

const std::string& prompt_template(StrategyId strategy) {
  switch (strategy) {
    case StrategyId::direct: return kDirectTemplate;
    case StrategyId::likert: return kLikertTemplate;
    case StrategyId::yesno: return kYesNoTemplate;
    case StrategyId::reason_yesno: return kReasonYesNoTemplate;
    case StrategyId::pairwise: return kPairwiseTemplate;
  }
  throw std::invalid_argument("unknown strategy");
}

const std::string& reason_followup_instruction() { return kReasonFollowup; }

MultimodalMessage render_pointwise(StrategyId strategy, const GroundQuery& query,
                                   const AerialCandidate& candidate) {
  if (!is_pointwise(strategy)) {
    throw std::invalid_argument("render_pointwise called with pairwise strategy");
  }
  require_ref(query.image_ref, "ground image");
  require_ref(candidate.image_ref, "aerial image");
  return split_at_placeholders(prompt_template(strategy),
                               {{"<GROUNDIMAGE>", query.image_ref},
                                {"<AERIALIMAGE>", candidate.image_ref}});
}

MultimodalMessage render_pairwise(const GroundQuery& query,
                                  const AerialCandidate& first,
                                  const AerialCandidate& second) {
  if (first.id == second.id) {
    throw std::invalid_argument("pairwise comparison of identical candidate '" +
                                first.id + "'");
  }
  require_ref(query.image_ref, "ground image");
  require_ref(first.image_ref, "first aerial image");
  require_ref(second.image_ref, "second aerial image");
  return split_at_placeholders(kPairwiseTemplate,
                               {{"<GROUNDIMAGE>", query.image_ref},
                                {"<AERIALIMAGE1>", first.image_ref},
                                {"<AERIALIMAGE2>", second.image_ref}});
}

}  // namespace cvgl
