// SPDX-License-Identifier: Apache-2.0
#include "cruforge/prompts.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace cruforge::prompts {
namespace {

struct Info {
  Template id;
  std::string_view asset;
  std::vector<std::string> placeholders;
  std::vector<std::string> image_placeholders;
};

const std::vector<Info>& registry() {
  static const std::vector<Info> infos = {
      {Template::System, "system", {}, {}},
      {Template::Emergency, "emergency", {}, {}},
      {Template::ZeroShotCot, "zero_shot_cot", {"image", "question"}, {"image"}},
      {Template::AnswerVerification, "answer_verification", {"question", "answer_gt", "answer_pred"}, {}},
      {Template::Decomposition, "decomposition", {"question", "cot"}, {}},
      {Template::Alignment, "alignment", {"correct", "wrong"}, {}},
      {Template::Planning, "planning", {"image", "question", "solution"}, {"image"}},
      {Template::GuidingQuestion,
       "guiding_question",
       {"question", "caption", "rationale", "steps", "step_index", "step_index_next"},
       {}},
      {Template::Localization, "localization", {"image", "structure"}, {"image"}},
      {Template::TextCoherence, "text_coherence", {"question", "answer", "pre_think", "latest_step"}, {}},
      {Template::VisualRelevance,
       "visual_relevance",
       {"image", "question", "answer", "latest_step", "sub_image"},
       {"image", "sub_image"}},
  };
  return infos;
}

const Info& info(Template t) {
  for (const auto& i : registry())
    if (i.id == t) return i;
  throw std::logic_error("unregistered template");
}

}  // namespace

std::string_view asset_name(Template t) { return info(t).asset; }

std::string_view text(Template t) {
  const auto& name = info(t).asset;
  for (const auto& e : detail::asset_table())
    if (name == e.name) return e.text;
  throw std::logic_error("missing prompt asset " + std::string(name));
}

const std::vector<std::string>& placeholders(Template t) { return info(t).placeholders; }

std::vector<Segment> render(Template t, const Vars& vars) {
  const Info& in = info(t);
  std::set<std::string, std::less<>> images(in.image_placeholders.begin(), in.image_placeholders.end());
  for (const auto& [k, v] : vars) {
    if (std::find(in.placeholders.begin(), in.placeholders.end(), k) == in.placeholders.end())
      throw std::invalid_argument("template " + std::string(in.asset) + " has no placeholder " + k);
    if (images.count(k)) throw std::invalid_argument("placeholder " + k + " is an image slot");
  }
  for (const auto& p : in.placeholders)
    if (!images.count(p) && !vars.count(p))
      throw std::invalid_argument("template " + std::string(in.asset) + " needs " + p);

  std::string_view src = text(t);
  std::vector<Segment> out;
  std::string cur;
  std::size_t i = 0;
  while (i < src.size()) {
    if (src[i] == '{') {
      auto close = src.find('}', i + 1);
      if (close != std::string_view::npos) {
        std::string_view name = src.substr(i + 1, close - i - 1);
        if (std::find(in.placeholders.begin(), in.placeholders.end(), name) != in.placeholders.end()) {
          if (images.count(name)) {
            if (!cur.empty()) out.push_back({false, std::move(cur)});
            cur.clear();
            out.push_back({true, std::string(name)});
          } else {
            cur += vars.find(name)->second;
          }
          i = close + 1;
          continue;
        }
      }
    }
    cur += src[i++];
  }
  if (!cur.empty()) out.push_back({false, std::move(cur)});
  return out;
}

std::string fill(Template t, const Vars& vars) {
  std::string out;
  for (const auto& seg : render(t, vars)) {
    if (seg.is_image) throw std::invalid_argument("fill() used on a template with image slots");
    out += seg.value;
  }
  return out;
}

}  // namespace cruforge::prompts
