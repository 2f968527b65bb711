// SPDX-License-Identifier: Apache-2.0
#include "cruforge/trajectory_io.hpp"

#include "cruforge/error.hpp"

namespace cruforge {

Json tool_call_to_json(const ToolCall& call) {
  Json args = Json::object();
  if (const auto* c = std::get_if<Crop>(&call)) {
    args["bbox_2d"] = {c->bbox.x1, c->bbox.y1, c->bbox.x2, c->bbox.y2};
    args["image_index"] = c->image_index;
  } else if (const auto* s = std::get_if<Scale>(&call)) {
    args["scale_factor"] = s->scale_factor;
    args["image_index"] = s->image_index;
  } else {
    args["image_index"] = std::get<Display>(call).image_index;
  }
  Json j;
  j["name"] = std::string(wire_name(tool_kind(call)));
  j["arguments"] = std::move(args);
  return j;
}

ToolCall tool_call_from_json(const Json& j) {
  auto decoded = decode_tool_call(j.dump());
  if (auto* err = std::get_if<FormatError>(&decoded))
    throw InputError("MalformedInput", "stored tool call rejected: " + err->detail);
  return std::get<ToolCall>(decoded);
}

Json turn_to_json(const Turn& turn) {
  Json j;
  j["think"] = turn.think;
  Json action;
  if (const auto* call = turn.tool()) {
    action["kind"] = "tool_call";
    Json c = tool_call_to_json(*call);
    action["name"] = c["name"];
    action["arguments"] = c["arguments"];
  } else {
    action["kind"] = "answer";
    action["answer"] = *turn.answer();
  }
  j["action"] = std::move(action);
  return j;
}

Turn turn_from_json(const Json& j) {
  try {
    Turn t;
    t.think = j.at("think").get<std::string>();
    const auto& a = j.at("action");
    auto kind = a.at("kind").get<std::string>();
    if (kind == "answer") {
      t.action = AnswerAction{a.at("answer").get<std::string>()};
    } else if (kind == "tool_call") {
      Json c;
      c["name"] = a.at("name");
      c["arguments"] = a.at("arguments");
      t.action = ToolAction{tool_call_from_json(c)};
    } else {
      throw InputError("MalformedInput", "unknown action kind " + kind);
    }
    return t;
  } catch (const Json::exception& e) {
    throw InputError("MalformedInput", std::string("bad turn record: ") + e.what());
  }
}

Json observation_to_json(const ObservationRef& o) {
  return Json{{"index", o.index}, {"width", o.width}, {"height", o.height}};
}

ObservationRef observation_from_json(const Json& j) {
  return ObservationRef{j.at("index").get<int>(), j.at("width").get<int>(), j.at("height").get<int>()};
}

Json trajectory_to_json(const Trajectory& t) {
  Json j;
  j["id"] = t.id;
  j["question"] = t.question;
  j["image_paths"] = t.image_paths;
  j["original"] = Json{{"width", t.original.width}, {"height", t.original.height}};
  j["turns"] = Json::array();
  for (const auto& turn : t.turns) j["turns"].push_back(turn_to_json(turn));
  j["observations"] = Json::array();
  for (const auto& o : t.observations) j["observations"].push_back(observation_to_json(o));
  j["answer"] = t.final_answer ? Json(*t.final_answer) : Json(nullptr);
  j["pattern_labels"] = Json::array();
  for (const auto& set : t.pattern_labels) {
    Json labels = Json::array();
    for (auto l : set.labels()) labels.push_back(std::string(to_string(l)));
    j["pattern_labels"].push_back(std::move(labels));
  }
  j["raw_outputs"] = t.raw_outputs;
  if (t.format_error) {
    j["format_error"] = Json{{"reason", std::string(to_string(t.format_error->reason))},
                             {"detail", t.format_error->detail}};
  } else {
    j["format_error"] = nullptr;
  }
  j["tool_error"] = t.tool_error ? Json(*t.tool_error) : Json(nullptr);
  j["text_only"] = t.text_only;
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  try {
    Trajectory t;
    t.id = j.value("id", "");
    t.question = j.at("question").get<std::string>();
    t.image_paths = j.value("image_paths", std::vector<std::string>{});
    if (j.contains("original")) {
      t.original = ObservationRef{0, j["original"].at("width").get<int>(), j["original"].at("height").get<int>()};
    }
    for (const auto& turn : j.at("turns")) t.turns.push_back(turn_from_json(turn));
    if (j.contains("observations"))
      for (const auto& o : j["observations"]) t.observations.push_back(observation_from_json(o));
    if (j.contains("answer") && !j["answer"].is_null()) t.final_answer = j["answer"].get<std::string>();
    if (j.contains("pattern_labels")) {
      for (const auto& labels : j["pattern_labels"]) {
        PatternSet set;
        for (const auto& l : labels) {
          auto p = pattern_from_string(l.get<std::string>());
          if (!p) throw InputError("MalformedInput", "unknown pattern label " + l.get<std::string>());
          set.add(*p);
        }
        t.pattern_labels.push_back(set);
      }
    }
    t.raw_outputs = j.value("raw_outputs", std::vector<std::string>{});
    if (j.contains("format_error") && !j["format_error"].is_null()) {
      auto reason = format_reason_from_string(j["format_error"].at("reason").get<std::string>());
      if (!reason) throw InputError("MalformedInput", "unknown format error reason");
      t.format_error = FormatError{*reason, j["format_error"].value("detail", "")};
    }
    if (j.contains("tool_error") && !j["tool_error"].is_null()) t.tool_error = j["tool_error"].get<std::string>();
    t.text_only = j.value("text_only", false);
    return t;
  } catch (const Json::exception& e) {
    throw InputError("MalformedInput", std::string("bad trajectory record: ") + e.what());
  }
}

std::vector<Trajectory> load_trajectories(const std::filesystem::path& path) {
  std::vector<Trajectory> out;
  for (const auto& j : read_jsonl(path)) out.push_back(trajectory_from_json(j));
  return out;
}

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& ts) {
  std::vector<Json> records;
  for (const auto& t : ts) records.push_back(trajectory_to_json(t));
  write_file(path, to_jsonl(records));
}

}  // namespace cruforge
