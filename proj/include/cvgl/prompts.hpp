#pragma once

#include <string>
#include <vector>

#include "cvgl/types.hpp"

namespace cvgl {

/// One piece of a multimodal message: either literal text or an image slot.
/// Image parts remember the placeholder token they replaced so a message can
/// be rendered back to the exact template text for drift checks.
struct MessagePart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string text;         // kind == text
  std::string image_ref;    // kind == image: URI or path, resolved downstream
  std::string placeholder;  // kind == image: e.g. "<AERIALIMAGE1>"

  bool operator==(const MessagePart&) const = default;
};

struct MultimodalMessage {
  std::vector<MessagePart> parts;

  /// Concatenated text parts: the template with placeholders removed.
  std::string text_only() const;
  /// Template reconstruction: image parts contribute their placeholder.
  std::string text_with_placeholders() const;

  bool operator==(const MultimodalMessage&) const = default;
};

/// The verbatim prompt template for a strategy. Placeholders: <GROUNDIMAGE>
/// plus <AERIALIMAGE> (pointwise) or <AERIALIMAGE1>/<AERIALIMAGE2> (pairwise).
const std::string& prompt_template(StrategyId strategy);

/// Second-turn instruction for the reason_yesno strategy, sent after the
/// model's free-form reasoning to pin the answer to a single token.
const std::string& reason_followup_instruction();

/// Renders a pointwise prompt with the ground image and one aerial candidate.
/// Throws std::invalid_argument for the pairwise strategy or empty refs.
MultimodalMessage render_pointwise(StrategyId strategy, const GroundQuery& query,
                                   const AerialCandidate& candidate);

/// Renders the pairwise prompt with `first` in slot 1 and `second` in slot 2.
/// Throws std::invalid_argument when the two candidate ids are equal or a
/// ref is empty.
MultimodalMessage render_pairwise(const GroundQuery& query,
                                  const AerialCandidate& first,
                                  const AerialCandidate& second);

}  // namespace cvgl
