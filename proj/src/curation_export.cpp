// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include <fmt/format.h>

#include "cruforge/curation.hpp"
#include "cruforge/rollout.hpp"

namespace cruforge::curation {

std::string_view to_string(SftStage s) { return s == SftStage::Instructional ? "instructional" : "practice"; }

Json export_sft_record(const Trajectory& t, SftStage stage) {
  Trajectory copy = t;
  copy.text_only = stage == SftStage::Instructional;
  if (stage == SftStage::Practice) {
    if (t.observations.size() != t.tool_call_count())
      throw Error("MissingObservationCache",
                  fmt::format("{}: {} tool calls but {} cached observations", t.id, t.tool_call_count(),
                              t.observations.size()));
    for (const auto& obs : t.observations) {
      auto i = static_cast<std::size_t>(obs.index);
      if (i >= t.image_paths.size() || t.image_paths[i].empty())
        throw Error("MissingObservationCache", fmt::format("{}: image {} was never executed", t.id, obs.index));
    }
  }
  Json j;
  j["id"] = t.id;
  j["stage"] = to_string(stage);
  j["messages"] = messages_to_json(transcript_messages(copy));
  j["answer"] = t.final_answer ? Json(*t.final_answer) : Json(nullptr);
  return j;
}

std::vector<Json> export_sft(const std::vector<Trajectory>& dataset, SftStage stage) {
  std::vector<Json> out;
  out.reserve(dataset.size());
  for (const auto& t : dataset) out.push_back(export_sft_record(t, stage));
  return out;
}

Json PatternStats::to_json() const {
  Json patterns = Json::object();
  for (auto l : kAllPatterns) {
    auto it = labels.find(l);
    patterns[std::string(cruforge::to_string(l))] = it == labels.end() ? 0 : it->second;
  }
  return Json{{"samples", samples},
              {"tools", {{"crop_image", crop}, {"scale_image", scale}, {"display_image", display}}},
              {"patterns", patterns},
              {"crus", {{"min", cru_min}, {"max", cru_max}, {"mean", cru_mean}}}};
}

PatternStats pattern_stats(const std::vector<Trajectory>& dataset) {
  PatternStats s;
  for (auto l : kAllPatterns) s.labels[l] = 0;
  std::size_t cru_total = 0;
  for (const auto& t : dataset) {
    ++s.samples;
    for (const auto& turn : t.turns) {
      const ToolCall* call = turn.tool();
      if (!call) continue;
      switch (tool_kind(*call)) {
        case ToolKind::Crop: ++s.crop; break;
        case ToolKind::Scale: ++s.scale; break;
        case ToolKind::Display: ++s.display; break;
      }
    }
    for (const auto& set : t.pattern_labels)
      for (auto l : set.labels()) ++s.labels[l];
    std::size_t n = to_crus(t).size();
    s.cru_min = s.samples == 1 ? n : std::min(s.cru_min, n);
    s.cru_max = std::max(s.cru_max, n);
    cru_total += n;
  }
  if (s.samples > 0) s.cru_mean = static_cast<double>(cru_total) / static_cast<double>(s.samples);
  return s;
}

}  // namespace cruforge::curation
