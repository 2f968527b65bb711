// SPDX-License-Identifier: Apache-2.0
#include <charconv>
#include <set>

#include <fmt/format.h>

#include "cruforge/curation.hpp"
#include "cruforge/judge.hpp"
#include "cruforge/prompts.hpp"

namespace cruforge::curation {

namespace {

std::optional<int> parse_id(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<int> id_value(const Json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) return parse_id(v.get<std::string>());
  return std::nullopt;
}

Json numbered(const std::vector<AnnotatedStep>& steps) {
  Json j = Json::object();
  for (std::size_t i = 0; i < steps.size(); ++i) j[std::to_string(i + 1)] = steps[i].think;
  return j;
}

}  // namespace

std::optional<std::vector<AnnotatedStep>> parse_decomposition(std::string_view reply) {
  auto j = find_json_object(reply, false);
  if (!j || j->empty()) return std::nullopt;
  const std::size_t n = j->size();
  std::vector<std::optional<AnnotatedStep>> slots(n);
  for (const auto& [key, value] : j->items()) {
    auto id = parse_id(key);
    if (!id || *id < 1 || static_cast<std::size_t>(*id) > n || slots[*id - 1]) return std::nullopt;
    if (!value.is_object() || !value.contains("think") || !value.contains("object")) return std::nullopt;
    if (!value["think"].is_string() || !value["object"].is_string()) return std::nullopt;
    AnnotatedStep step{std::string(trim(value["think"].get<std::string>())),
                       std::string(trim(value["object"].get<std::string>()))};
    if (step.think.empty() || step.object.empty()) return std::nullopt;
    slots[*id - 1] = std::move(step);
  }
  std::vector<AnnotatedStep> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<AnnotatedStep> decompose_steps(ChatBackend& llm, const std::string& key, const std::string& question,
                                           const std::string& path_text) {
  ChatRequest req;
  req.tag = "decompose";
  req.key = key;
  req.messages.push_back(Message::text(
      Role::User, prompts::fill(prompts::Template::Decomposition, {{"question", question}, {"cot", path_text}})));
  return query_with_retries(llm, std::move(req), parse_decomposition, "decomposition");
}

std::vector<ProtoCru> group_into_crus(const std::vector<AnnotatedStep>& steps) {
  std::vector<ProtoCru> out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (out.empty() || out.back().object != steps[i].object) out.push_back(ProtoCru{steps[i].object, {}, {}});
    out.back().step_ids.push_back(static_cast<int>(i + 1));
    out.back().steps.push_back(steps[i].think);
  }
  return out;
}

std::optional<StepAlignment> parse_alignment(std::string_view reply, int wrong_count, int correct_count) {
  auto j = find_json_object(reply, true, [](const Json& o) { return o.contains("wrong_step"); });
  if (!j) return std::nullopt;
  if (j->size() != static_cast<std::size_t>(wrong_count) + 1) return std::nullopt;
  StepAlignment a;
  auto ws = id_value((*j)["wrong_step"]);
  if (!ws) return std::nullopt;
  for (int id = 1; id <= wrong_count; ++id) {
    auto key = std::to_string(id);
    if (!j->contains(key)) return std::nullopt;
    auto target = id_value((*j)[key]);
    if (!target) return std::nullopt;
    if (*target < 1 || *target > correct_count)
      throw Error("InvalidMapping", fmt::format("wrong step {} maps to missing correct step {}", id, *target));
    a.mapping[id] = *target;
  }
  if (*ws < 1 || *ws > wrong_count)
    throw Error("InvalidMapping", fmt::format("wrong_step {} is not a wrong-path step", *ws));
  a.wrong_step = *ws;
  return a;
}

AlignedPath align_and_truncate(ChatBackend& llm, const std::string& key, const std::vector<AnnotatedStep>& correct,
                               const std::vector<ProtoCru>& correct_crus, const std::vector<AnnotatedStep>& wrong) {
  if (correct.empty() || wrong.empty()) throw std::invalid_argument("alignment needs two nonempty step lists");
  ChatRequest req;
  req.tag = "align";
  req.key = key;
  req.messages.push_back(Message::text(
      Role::User, prompts::fill(prompts::Template::Alignment,
                                {{"correct", numbered(correct).dump(4, ' ', false, Json::error_handler_t::replace)},
                                 {"wrong", numbered(wrong).dump(4, ' ', false, Json::error_handler_t::replace)}})));
  const int nw = static_cast<int>(wrong.size()), nc = static_cast<int>(correct.size());
  AlignedPath out;
  out.alignment = query_with_retries(
      llm, std::move(req), [&](std::string_view r) { return parse_alignment(r, nw, nc); }, "alignment");

  std::vector<int> cru_of_step(correct.size() + 1, -1);
  for (std::size_t c = 0; c < correct_crus.size(); ++c)
    for (int id : correct_crus[c].step_ids) cru_of_step.at(static_cast<std::size_t>(id)) = static_cast<int>(c);

  for (int id = 1; id <= out.alignment.wrong_step; ++id) {
    int c = cru_of_step.at(static_cast<std::size_t>(out.alignment.mapping.at(id)));
    if (c < 0) throw Error("InvalidMapping", fmt::format("correct step for wrong step {} has no CRU", id));
    if (out.kept.empty() || out.kept.back().p0_cru != c)
      out.kept.push_back(KeptCru{c, correct_crus[static_cast<std::size_t>(c)].object, {}, {}});
    out.kept.back().step_ids.push_back(id);
    out.kept.back().steps.push_back(wrong[static_cast<std::size_t>(id - 1)].think);
  }
  return out;
}

}  // namespace cruforge::curation
