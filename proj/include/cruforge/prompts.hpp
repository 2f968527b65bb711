// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace cruforge::prompts {

enum class Template {
  System,
  Emergency,
  ZeroShotCot,
  AnswerVerification,
  Decomposition,
  Alignment,
  Planning,
  GuidingQuestion,
  Localization,
  TextCoherence,
  VisualRelevance,
};

// Asset set version; bump when any template text changes.
inline constexpr std::string_view kVersion = "v1";

std::string_view asset_name(Template t);
std::string_view text(Template t);
// Declared placeholder names, in first-appearance order.
const std::vector<std::string>& placeholders(Template t);

using Vars = std::map<std::string, std::string, std::less<>>;

// A rendered prompt, split around image placeholders such as {image}.
struct Segment {
  bool is_image = false;
  std::string value;  // text, or the placeholder name for images
};

// Substitutes declared placeholders only; any other brace text is literal.
// Throws std::invalid_argument when a declared text placeholder is missing or
// an undeclared variable is supplied.
std::vector<Segment> render(Template t, const Vars& vars);
// Convenience for templates with no image placeholders.
std::string fill(Template t, const Vars& vars);

struct AssetEntry {
  const char* name;
  const char* text;
};

namespace detail {
const std::vector<AssetEntry>& asset_table();
}

}  // namespace cruforge::prompts
