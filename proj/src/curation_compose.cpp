// SPDX-License-Identifier: Apache-2.0
#include <algorithm>

#include <fmt/format.h>

#include "cruforge/curation.hpp"
#include "cruforge/image.hpp"
#include "cruforge/trajectory_io.hpp"

namespace cruforge::curation {

namespace {

int rank(PathSource s) {
  switch (s) {
    case PathSource::P1: return 0;
    case PathSource::P2: return 1;
    case PathSource::P0: return 2;
  }
  return 3;
}

std::string planning_text(const ComposeDraft& d) { return d.planning.caption + " " + d.planning.rationale; }

std::string with_guide(std::string text, const std::optional<std::string>& guide) {
  if (guide) text += " " + *guide;
  return text;
}

BBox fit(const BBox& b, const ImageRecord& frame) {
  if (auto c = clip_bbox(b, frame.width, frame.height)) return *c;
  return BBox{0, 0, frame.width, frame.height};
}

void validate_draft(const ComposeDraft& d) {
  if (d.units.empty()) throw std::invalid_argument("draft has no units");
  if (d.units.back().source != PathSource::P0) throw std::invalid_argument("draft must end with a p0 unit");
  if (!(d.f_minus > 0) || !(d.f_plus > 0)) throw std::invalid_argument("scale factors must be positive");
  int p1_errors = 0, p2_errors = 0;
  for (std::size_t i = 0; i < d.units.size(); ++i) {
    const auto& u = d.units[i];
    if (i > 0 && rank(u.source) < rank(d.units[i - 1].source))
      throw std::invalid_argument("draft units must run p1, p2, p0");
    if (u.steps.empty()) throw std::invalid_argument("draft unit without steps");
    if (!u.bbox.valid()) throw std::invalid_argument("draft unit with an invalid box");
    if (u.is_error && u.source == PathSource::P0) throw std::invalid_argument("p0 units cannot hold an error");
    if (u.is_error && u.source == PathSource::P1) ++p1_errors;
    if (u.is_error && u.source == PathSource::P2) ++p2_errors;
  }
  if (p1_errors > 1 || p2_errors > 1) throw std::invalid_argument("at most one error per wrong path");
  bool has_p1 = std::any_of(d.units.begin(), d.units.end(), [](const auto& u) { return u.source == PathSource::P1; });
  if (has_p1) {
    auto last_p1 = std::find_if(d.units.rbegin(), d.units.rend(), [](const auto& u) { return u.source == PathSource::P1; });
    if (!last_p1->is_error) throw std::invalid_argument("p1 units must end at err1");
  }

  auto check = [&](const std::string& s) {
    if (has_tag_marker(s)) throw Error("TagMarkerInText", "text contains a protocol tag: " + s.substr(0, 80));
  };
  check(d.planning.caption);
  check(d.planning.rationale);
  check(d.answer);
  if (d.planning_guide) check(*d.planning_guide);
  for (const auto& u : d.units) {
    for (const auto& s : u.steps) check(s);
    if (u.guiding_question) check(*u.guiding_question);
  }
}

std::string display_name(DisplayMode m) { return m == DisplayMode::AppendAlias ? "append" : "reuse"; }

}  // namespace

bool ComposedPath::has_p1() const {
  return std::any_of(draft.units.begin(), draft.units.end(), [](const auto& u) { return u.source == PathSource::P1; });
}

double ComposedPath::image0_factor() const { return has_p1() ? draft.f_minus : draft.f_plus; }

std::vector<std::string> guide_units(const ComposeDraft& draft) {
  std::vector<std::string> out{planning_text(draft)};
  for (const auto& u : draft.units) out.push_back(join(u.steps, " "));
  return out;
}

std::vector<int> guide_slots(const ComposeDraft& draft) {
  std::vector<int> out;
  if (draft.units.empty()) return out;
  out.push_back(1);
  for (std::size_t u = 0; u + 1 < draft.units.size(); ++u)
    if (!draft.units[u].is_error) out.push_back(static_cast<int>(u) + 2);
  return out;
}

ComposedPath apply_patterns(const ComposeDraft& draft) {
  validate_draft(draft);
  ComposedPath path;
  path.draft = draft;
  const bool p1 = path.has_p1();
  const double f0 = path.image0_factor();

  ImageStore store = ImageStore::shapes_only(scaled_dim(draft.width, f0), scaled_dim(draft.height, f0), draft.display);
  path.image0 = store.at(0).ref();

  struct Emitted {
    int parent;
    BBox frame_box;
    int output;
    PathSource source;
  };
  std::vector<Emitted> crops;
  int base = 0;  // frame for p2/p0 crops; becomes the backtracking scale output
  bool scaled = !p1;
  std::optional<int> display_index;

  auto fetch = [&](const GroundedCru& u, PatternSet& labels) -> std::pair<ToolCall, std::optional<Emitted>> {
    if (u.source == PathSource::P2 && u.is_error) {
      labels.add(PatternLabel::Verifying);
      return {Display{0}, std::nullopt};
    }
    int parent = base;
    double f = draft.f_plus;
    if (u.source == PathSource::P1 && !scaled) {
      parent = 0;
      f = f0;
    } else if (u.source == PathSource::P2 && display_index) {
      parent = *display_index;
      f = f0;
    }
    BBox box = fit(scale_bbox(u.bbox, f), store.at(parent));
    Emitted e{parent, box, -1, u.source};
    for (auto it = crops.rbegin(); it != crops.rend(); ++it) {
      if (it->parent == parent && it->source == u.source && contains(it->frame_box, box)) {
        labels.add(PatternLabel::Reflecting);
        return {Crop{translate_into_crop(it->frame_box, box), it->output}, e};
      }
    }
    return {Crop{box, parent}, e};
  };

  auto emit = [&](std::string think, Action action, PatternSet labels, int unit) {
    if (labels.has(PatternLabel::Verifying) && labels.has(PatternLabel::Backtracking))
      throw PatternConflict(fmt::format("turn {} would both verify and backtrack", path.turns.size()));
    path.turns.push_back(ComposedTurn{Turn{std::move(think), std::move(action)}, labels, unit});
  };

  auto run = [&](const ToolCall& call) {
    ObservationRef obs = store.exec(call);
    path.observations.push_back(obs);
    return obs;
  };

  std::string pending = with_guide(std::string(kPlanningOpening) + " " + planning_text(draft), draft.planning_guide);
  PatternSet pending_labels{PatternLabel::Planning};
  int pending_unit = -1;

  const int n = static_cast<int>(draft.units.size());
  for (int u = 0; u < n; ++u) {
    const GroundedCru& unit = draft.units[static_cast<std::size_t>(u)];
    PatternSet labels = pending_labels;
    auto [call, emitted] = fetch(unit, labels);
    emit(std::move(pending), ToolAction{call}, labels, pending_unit);
    ObservationRef obs = run(call);
    if (emitted) {
      emitted->output = obs.index;
      crops.push_back(*emitted);
    }
    if (std::holds_alternative<Display>(call)) display_index = obs.index;

    std::string think = with_guide(join(unit.steps, " "), unit.guiding_question);
    if (unit.is_error && unit.source == PathSource::P1) {
      const double factor = draft.f_plus / draft.f_minus;
      const bool down = factor < 1.0;
      think += fmt::format(" {} Image 0 is too {}. I need to scale it {} for a better view.", kSelfCorrection,
                           down ? "big" : "small", down ? "down" : "up");
      emit(std::move(think), ToolAction{Scale{factor, 0}}, PatternSet{PatternLabel::Backtracking}, u);
      base = run(Scale{factor, 0}).index;
      scaled = true;
      pending = with_guide(std::string(kReviewOpening) + " " + planning_text(draft), draft.planning_guide);
      pending_labels = {};
      pending_unit = -1;
      continue;
    }
    if (unit.is_error) think += " " + std::string(kSelfCorrection);
    if (u == n - 1) {
      emit(std::move(think), AnswerAction{draft.answer}, {}, u);
      break;
    }
    pending = std::move(think);
    pending_labels = {};
    pending_unit = u;
  }
  return path;
}

ComposedPath compose_final(const std::vector<GroundedCru>& p1, const std::vector<GroundedCru>& p2,
                           const std::vector<GroundedCru>& p0, const Planning& planning, const std::string& answer,
                           ComposeDraft context) {
  context.planning = planning;
  context.answer = answer;
  context.units.clear();
  for (const auto* part : {&p1, &p2, &p0})
    context.units.insert(context.units.end(), part->begin(), part->end());
  return apply_patterns(context);
}

Trajectory ComposedPath::to_trajectory() const {
  Trajectory t;
  t.id = draft.id;
  t.question = draft.question;
  t.original = image0;
  for (const auto& ct : turns) {
    t.turns.push_back(ct.turn);
    t.pattern_labels.push_back(ct.labels);
  }
  t.observations = observations;
  t.final_answer = draft.answer;
  return t;
}

std::vector<std::string> check_composed(const ComposedPath& path) {
  std::vector<std::string> issues;
  const auto& turns = path.turns;
  if (turns.empty()) return {"no turns"};

  std::size_t planning = 0, backtracking = 0, verifying = 0;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const auto& ct = turns[i];
    if (ct.labels.has(PatternLabel::Planning)) {
      ++planning;
      if (i != 0) issues.push_back(fmt::format("Planning label on turn {}", i));
    }
    if (ct.labels.has(PatternLabel::Backtracking)) ++backtracking;
    if (ct.labels.has(PatternLabel::Verifying)) ++verifying;
    const bool last = i + 1 == turns.size();
    if (!last && !ct.turn.tool()) issues.push_back(fmt::format("turn {} carries no tool call", i));
    if (last && (!ct.turn.answer() || *ct.turn.answer() != path.draft.answer))
      issues.push_back("last turn does not carry the ground-truth answer");
    if (has_tag_marker(ct.turn.think)) issues.push_back(fmt::format("turn {} think holds a tag marker", i));
  }
  if (planning != 1) issues.push_back(fmt::format("{} Planning labels", planning));
  if (backtracking > 1) issues.push_back(fmt::format("{} Backtracking labels", backtracking));
  if (verifying > 1) issues.push_back(fmt::format("{} Verifying labels", verifying));

  int prev_unit = -1;
  for (const auto& ct : turns) {
    if (ct.unit < 0) continue;
    if (ct.unit <= prev_unit) issues.push_back("unit order not preserved");
    prev_unit = ct.unit;
  }
  const auto& units = path.draft.units;
  for (std::size_t i = 1; i < units.size(); ++i)
    if (rank(units[i].source) < rank(units[i - 1].source)) issues.push_back("units not in p1, p2, p0 order");
  for (auto src : {PathSource::P1, PathSource::P2}) {
    bool after_error = false;
    for (const auto& u : units) {
      if (u.source != src) continue;
      if (after_error) issues.push_back(fmt::format("{} step kept after its first error", to_string(src)));
      after_error = after_error || u.is_error;
    }
  }

  try {
    ImageStore store = ImageStore::shapes_only(path.image0.width, path.image0.height, path.draft.display);
    std::size_t k = 0;
    for (const auto& ct : turns) {
      if (!ct.turn.tool()) continue;
      ObservationRef obs = store.exec(*ct.turn.tool());
      if (k >= path.observations.size() || !(path.observations[k] == obs))
        issues.push_back(fmt::format("observation {} does not match replay", k));
      ++k;
    }
    if (k != path.observations.size()) issues.push_back("observation count differs from tool calls");
  } catch (const ToolError& e) {
    issues.push_back(fmt::format("replay failed: {}: {}", e.code(), e.what()));
  }
  return issues;
}

Json composed_to_json(const ComposedPath& path) {
  Json j = trajectory_to_json(path.to_trajectory());
  const auto& d = path.draft;
  Json units = Json::array();
  for (const auto& u : d.units) {
    units.push_back({{"source", to_string(u.source)},
                     {"focus_object", u.focus_object},
                     {"bbox", {u.bbox.x1, u.bbox.y1, u.bbox.x2, u.bbox.y2}},
                     {"steps", u.steps},
                     {"guiding_question", u.guiding_question ? Json(*u.guiding_question) : Json(nullptr)},
                     {"is_error", u.is_error}});
  }
  Json turn_units = Json::array();
  for (const auto& ct : path.turns) turn_units.push_back(ct.unit);
  j["composition"] = {{"width", d.width},
                      {"height", d.height},
                      {"f_minus", d.f_minus},
                      {"f_plus", d.f_plus},
                      {"display", display_name(d.display)},
                      {"planning",
                       {{"caption", d.planning.caption},
                        {"rationale", d.planning.rationale},
                        {"guide", d.planning_guide ? Json(*d.planning_guide) : Json(nullptr)}}},
                      {"units", units},
                      {"turn_units", turn_units}};
  return j;
}

ComposedPath composed_from_json(const Json& j) {
  try {
    const Json& c = j.at("composition");
    ComposeDraft d;
    d.id = j.value("id", "");
    d.question = j.at("question").get<std::string>();
    d.answer = j.at("answer").get<std::string>();
    d.width = c.at("width").get<int>();
    d.height = c.at("height").get<int>();
    d.f_minus = c.at("f_minus").get<double>();
    d.f_plus = c.at("f_plus").get<double>();
    d.display = c.at("display").get<std::string>() == "reuse" ? DisplayMode::ReuseIndex : DisplayMode::AppendAlias;
    d.planning = Planning{c.at("planning").at("caption").get<std::string>(),
                          c.at("planning").at("rationale").get<std::string>()};
    if (!c["planning"].at("guide").is_null()) d.planning_guide = c["planning"]["guide"].get<std::string>();
    for (const auto& u : c.at("units")) {
      GroundedCru g;
      auto src = path_source_from_string(u.at("source").get<std::string>());
      if (!src) throw InputError("MalformedInput", "unknown unit source");
      g.source = *src;
      g.focus_object = u.at("focus_object").get<std::string>();
      const auto& b = u.at("bbox");
      g.bbox = BBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
      g.steps = u.at("steps").get<std::vector<std::string>>();
      if (!u.at("guiding_question").is_null()) g.guiding_question = u["guiding_question"].get<std::string>();
      g.is_error = u.at("is_error").get<bool>();
      d.units.push_back(std::move(g));
    }
    ComposedPath path = apply_patterns(d);
    Trajectory stored = trajectory_from_json(j);
    if (stored.turns != path.to_trajectory().turns)
      throw InputError("MalformedInput", "composed turns do not match their composition record for " + d.id);
    return path;
  } catch (const Json::exception& e) {
    throw InputError("MalformedInput", std::string("bad composed record: ") + e.what());
  }
}

Trajectory execute_composed(const ComposedPath& path, const Raster& original, const std::filesystem::path& dir) {
  if (original.width != path.draft.width || original.height != path.draft.height)
    throw InputError("ImageMismatch", fmt::format("{}: image is {}x{}, composition expects {}x{}", path.draft.id,
                                                  original.width, original.height, path.draft.width,
                                                  path.draft.height));
  Raster image0 = resize_bilinear(original, path.image0.width, path.image0.height);
  ImageStore store(std::move(image0), path.draft.display);
  Trajectory t = path.to_trajectory();
  auto file_for = [&](int index) { return dir / fmt::format("{}_{}.png", path.draft.id, index); };
  std::vector<std::string> paths;
  save_png(file_for(0), *store.at(0).pixels);
  paths.push_back(file_for(0).string());
  std::size_t k = 0;
  for (const auto& turn : t.turns) {
    if (!turn.tool()) continue;
    std::size_t before = store.size();
    ObservationRef obs = store.exec(*turn.tool());
    if (k >= t.observations.size() || !(t.observations[k] == obs))
      throw Error("ObservationMismatch", fmt::format("{}: tool call {} produced {}", path.draft.id, k, obs.header()));
    ++k;
    if (store.size() == before) continue;
    save_png(file_for(obs.index), *store.at(obs.index).pixels);
    paths.push_back(file_for(obs.index).string());
  }
  t.image_paths = std::move(paths);
  return t;
}

}  // namespace cruforge::curation
