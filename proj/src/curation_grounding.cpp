// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <fmt/format.h>

#include "cruforge/curation.hpp"
#include "cruforge/judge.hpp"
#include "cruforge/prompts.hpp"

namespace cruforge::curation {

namespace {

bool is_box(const Json& v) {
  if (!v.is_array() || v.size() != 4) return false;
  for (const auto& x : v)
    if (!x.is_number()) return false;
  return true;
}

std::optional<BBox> to_box(const Json& v) {
  auto at = [&](int i) { return v[static_cast<std::size_t>(i)].get<double>(); };
  BBox b{static_cast<int>(std::floor(at(0))), static_cast<int>(std::floor(at(1))),
         static_cast<int>(std::ceil(at(2))), static_cast<int>(std::ceil(at(3)))};
  if (b.x1 >= b.x2 || b.y1 >= b.y2) return std::nullopt;
  return b;
}

}  // namespace

std::optional<Localization> parse_localization(std::string_view reply) {
  auto j = find_json_object(reply, true, [](const Json& o) {
    for (const auto& [k, v] : o.items())
      if (!is_box(v)) return false;
    return true;
  });
  if (!j) return std::nullopt;
  Localization loc;
  for (const auto& [k, v] : j->items()) {
    auto b = to_box(v);
    if (!b) return std::nullopt;
    if (k == "structure")
      loc.structure = *b;
    else
      loc.texts.emplace_back(k, *b);
  }
  return loc;
}

BBox fuse_grounding(const Localization& loc, int width, int height) {
  std::optional<BBox> u = loc.structure;
  for (const auto& [name, b] : loc.texts) u = u ? union_bbox(*u, b) : b;
  if (!u) throw Error("EmptyGrounding", "localization returned no boxes");
  auto clipped = clip_bbox(*u, width, height);
  if (!clipped) throw Error("EmptyGrounding", "grounding region lies outside the image");
  return *clipped;
}

BBox ground_cru(ChatBackend& vlm, const std::string& key, const ImagePart& image, const std::string& focus_object) {
  ChatRequest req;
  req.tag = "localize";
  req.key = key;
  req.messages.push_back(user_message(prompts::render(prompts::Template::Localization, {{"structure", focus_object}}),
                                      {{"image", image}}));
  auto loc = query_with_retries(vlm, std::move(req), parse_localization, "localization");
  return fuse_grounding(loc, image.ref.width, image.ref.height);
}

std::optional<Planning> parse_planning(std::string_view reply) {
  auto j = find_json_object(reply, true, [](const Json& o) { return o.contains("caption") && o.contains("rationale"); });
  if (!j || !(*j)["caption"].is_string() || !(*j)["rationale"].is_string()) return std::nullopt;
  Planning p{std::string(trim((*j)["caption"].get<std::string>())),
             std::string(trim((*j)["rationale"].get<std::string>()))};
  if (p.caption.empty() || p.rationale.empty()) return std::nullopt;
  return p;
}

Planning gen_planning(ChatBackend& vlm, const std::string& key, const ImagePart& image_at_f_plus,
                      const std::string& question, const std::string& solution) {
  ChatRequest req;
  req.tag = "planning";
  req.key = key;
  req.messages.push_back(user_message(
      prompts::render(prompts::Template::Planning, {{"question", question}, {"solution", solution}}),
      {{"image", image_at_f_plus}}));
  return query_with_retries(vlm, std::move(req), parse_planning, "planning");
}

std::string gen_guiding_question(ChatBackend& llm, const std::string& key, const std::string& question,
                                 const Planning& planning, const std::vector<std::string>& steps, int i) {
  if (i < 1 || static_cast<std::size_t>(i) >= steps.size())
    throw std::invalid_argument(fmt::format("guide position {} outside [1, {})", i, steps.size()));
  std::string listed;
  for (std::size_t k = 0; k < steps.size(); ++k) listed += fmt::format("\n{}. {}", k + 1, steps[k]);
  ChatRequest req;
  req.tag = "guide";
  req.key = key;
  req.messages.push_back(Message::text(
      Role::User, prompts::fill(prompts::Template::GuidingQuestion, {{"question", question},
                                                                     {"caption", planning.caption},
                                                                     {"rationale", planning.rationale},
                                                                     {"steps", listed},
                                                                     {"step_index", std::to_string(i)},
                                                                     {"step_index_next", std::to_string(i + 1)}})));
  auto parse = [](std::string_view r) -> std::optional<std::string> {
    auto boxed = extract_boxed(r);
    if (!boxed) return std::nullopt;
    std::string g(trim(*boxed));
    if (g.empty()) return std::nullopt;
    return g;
  };
  return query_with_retries(llm, std::move(req), parse, "guiding question");
}

}  // namespace cruforge::curation
