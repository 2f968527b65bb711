// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <fmt/format.h>

#include "cruforge/error.hpp"
#include "cruforge/image.hpp"
#include "cruforge/util.hpp"
#include "testkit.hpp"

namespace cruforge::fixtures {

TraceFixture load_trace(const std::string& name) {
  Json j = Json::parse(read_file(testkit::fixture_path("traces/" + name + ".json")));
  TraceFixture t;
  t.id = j.at("id").get<std::string>();
  t.question = j.at("question").get<std::string>();
  t.width = j.at("image").at("width").get<int>();
  t.height = j.at("image").at("height").get<int>();
  t.display = j.at("display_mode").get<std::string>() == "reuse" ? DisplayMode::ReuseIndex : DisplayMode::AppendAlias;
  t.answer = j.at("answer").get<std::string>();
  if (j.contains("labels")) {
    std::vector<PatternSet> labels;
    for (const auto& turn : j["labels"]) {
      PatternSet s;
      for (const auto& l : turn) s.add(*pattern_from_string(l.get<std::string>()));
      labels.push_back(s);
    }
    t.labels = std::move(labels);
  }
  t.outputs = j.at("outputs").get<std::vector<std::string>>();
  return t;
}

const std::vector<std::string>& trace_names() {
  static const std::vector<std::string> names{"geoqa", "mathvista", "crux_example"};
  return names;
}

// ---- synthetic curation corpus ----

const std::vector<CurationProblem>& curation_problems() {
  static const std::vector<CurationProblem> problems{
      {"p00", 224, 168, {0, 1, 2, 4, 4}, Layout::Nested, "B", "", false},
      {"p01", 280, 196, {1, 2, 3, 5, 4}, Layout::Split, "12", "", false},
      {"p02", 252, 252, {4, 4, 2, 1, 0}, Layout::Nested, "C", "", false},
      {"p03", 196, 140, {0, 0, 3, 3, 3}, Layout::Split, "45", "", false},
      {"p04", 56, 56, {0, 1, 4, 4, 4}, Layout::Nested, "A", "", false},
      {"p05", 308, 224, {0, 4, 4, 4, 1}, Layout::Split, "7.5", "", false},
      {"p06", 240, 180, {1, 1, 1, 1, 1}, Layout::Nested, "D", "NoPair", false},
      {"p07", 240, 180, {0, 0, 0, 5, 5}, Layout::Nested, "B", "MissingPathClass", false},
      {"p08", 266, 210, {3, 0, 0, 0, 4}, Layout::Nested, "3", "", false},
      {"p09", 210, 280, {0, 2, 4, 2, 0}, Layout::Split, "yes", "", false},
      {"p10", 238, 238, {0, 1, 3, 4, 2}, Layout::Nested, "60", "", false},
      {"p11", 224, 224, {0, 1, 2, 4, 4}, Layout::Nested, "E", "InvalidMapping", true},
  };
  return problems;
}

std::string sampled_text(const CurationProblem& p, std::size_t s, int k) {
  const bool ok = k < p.correct.at(s);
  std::string text = fmt::format("Let me inspect the figure at scale {}.", format_real(curation::kScaleFactors.at(s)));
  const int extra = static_cast<int>((static_cast<std::size_t>(k) * 7 + s * 3) % 5) + k;
  for (int i = 0; i < extra; ++i) text += fmt::format(" Detail {} of the figure is consistent.", i + 1);
  text += ok ? "\nThe answer is \\boxed{" + p.answer + "}." : fmt::format("\nThe answer is \\boxed{{W{}}}.", k);
  return text;
}

namespace {

struct ObjectBoxes {
  std::string name;
  BBox structure;
  std::vector<std::pair<std::string, BBox>> texts;

  BBox fused() const {
    BBox u = structure;
    for (const auto& [n, b] : texts) u = union_bbox(u, b);
    return u;
  }
};

struct Step {
  std::string think;
  std::string object;
};

struct LayoutSpec {
  std::vector<ObjectBoxes> objects;
  std::vector<Step> p0, p1, p2;
  std::vector<int> map1, map2;  // wrong step -> correct step, 1-based
  int wrong1 = 1, wrong2 = 1;
};

LayoutSpec layout_spec(Layout layout, int w, int h) {
  LayoutSpec s;
  if (layout == Layout::Nested) {
    s.objects = {
        {"main figure", {w / 10, h / 10, w * 9 / 10, h * 9 / 10}, {{"label P", {w / 8, h / 8, w / 4, h / 5}}}},
        {"upper left angle", {w / 5, h / 4, w * 2 / 5, h / 2}, {}},
        {"lower right region",
         {w / 2, h / 2, w * 4 / 5, h * 4 / 5},
         {{"value tag", {w * 3 / 5, h * 3 / 5, w * 17 / 20, h * 17 / 20}}}},
    };
    s.p0 = {{"Identify the overall figure and its labelled points.", "main figure"},
            {"The figure is a triangle with point P marked.", "main figure"},
            {"Read the angle near the upper left, which is 40 degrees.", "upper left angle"},
            {"Use the value in the lower right region to finish the computation.", "lower right region"}};
    s.p1 = {{"Look at the whole figure.", ""},
            {"The angle near the upper left looks like 30 degrees.", ""},
            {"Conclude with the value from that angle.", ""}};
    s.map1 = {1, 3, 4};
    s.wrong1 = 2;
    s.p2 = {{"Assume the figure is symmetric.", ""}, {"Report the mirrored value.", ""}};
    s.map2 = {2, 4};
    s.wrong2 = 1;
  } else {
    s.objects = {
        {"left panel", {0, 0, w / 2, h / 2}, {}},
        {"right panel", {w / 2, h / 2, w, h}, {{"panel title", {w / 2 + 2, h / 2 + 2, w * 3 / 4, h * 3 / 5}}}},
        {"right panel legend", {w / 2 + w / 10, h / 2 + h / 10, w - w / 10, h - h / 10}, {}},
    };
    s.p0 = {{"The left panel shows the first quantity.", "left panel"},
            {"The right panel shows the second quantity.", "right panel"},
            {"The legend of the right panel gives the unit, so combine both.", "right panel legend"}};
    s.p1 = {{"The left panel seems to show nothing relevant.", ""}};
    s.map1 = {1};
    s.wrong1 = 1;
    s.p2 = {{"The left panel shows the first quantity.", ""},
            {"It is measured in meters.", ""},
            {"The right panel must be ignored.", ""}};
    s.map2 = {1, 1, 2};
    s.wrong2 = 3;
  }
  return s;
}

Json decomposition_json(const std::vector<Step>& steps, const std::vector<Step>& p0, const std::vector<int>& map) {
  Json j = Json::object();
  for (std::size_t i = 0; i < steps.size(); ++i) {
    std::string object = steps[i].object;
    if (object.empty()) object = p0.at(static_cast<std::size_t>(map.at(i) - 1)).object;
    j[std::to_string(i + 1)] = Json{{"think", steps[i].think}, {"object", object}};
  }
  return j;
}

Json alignment_json(const std::vector<int>& map, int wrong) {
  Json j = Json::object();
  for (std::size_t i = 0; i < map.size(); ++i) j[std::to_string(i + 1)] = std::to_string(map[i]);
  j["wrong_step"] = std::to_string(wrong);
  return j;
}

Json replay(const std::string& tag, const std::string& key, const std::string& output) {
  return Json{{"tag", tag}, {"key", key}, {"output", output}};
}

std::string cot(const std::vector<Step>& steps) {
  std::vector<std::string> parts;
  for (const auto& s : steps) parts.push_back(s.think);
  return join(parts, "\n");
}

}  // namespace

CurationFixture write_curation_fixture(const std::filesystem::path& dir) {
  CurationFixture fx;
  fx.dir = dir;
  fx.problems = curation_problems();
  std::filesystem::create_directories(dir / "images");
  std::vector<Json> manifest, records;
  std::uint32_t seed = 1;
  for (const auto& p : fx.problems) {
    save_png(dir / "images" / (p.id + ".png"), testkit::pattern_image(p.width, p.height, seed++));
    manifest.push_back({{"id", p.id},
                        {"image_path", "images/" + p.id + ".png"},
                        {"question", fmt::format("Problem {}: what is the value asked about in the figure?", p.id)},
                        {"ground_truth_answer", p.answer}});
    for (std::size_t s = 0; s < curation::kScaleFactors.size(); ++s)
      for (int k = 0; k < kSamplesPerScale; ++k) {
        auto key = curation::sample_key(p.id, curation::kScaleFactors[s], k);
        records.push_back(replay("sample", key, sampled_text(p, s, k)));
        records.push_back(replay("verify", key, fmt::format("Judgement: \\boxed{{{}}}", k < p.correct[s] ? 1 : 0)));
      }
    auto spec = layout_spec(p.layout, p.width, p.height);
    std::vector<int> identity;
    for (std::size_t i = 0; i < spec.p0.size(); ++i) identity.push_back(static_cast<int>(i) + 1);
    records.push_back(replay("decompose", p.id + "/p0",
                             "Here is the decomposition:\n" + decomposition_json(spec.p0, spec.p0, identity).dump(4)));
    records.push_back(replay("decompose", p.id + "/p1", decomposition_json(spec.p1, spec.p0, spec.map1).dump(4)));
    records.push_back(replay("decompose", p.id + "/p2", decomposition_json(spec.p2, spec.p0, spec.map2).dump(4)));
    records.push_back(replay("align", p.id + "/p1",
                             "Analysis done.\n" +
                                 alignment_json(spec.map1, p.bad_alignment ? static_cast<int>(spec.map1.size()) + 6
                                                                          : spec.wrong1)
                                     .dump(4)));
    records.push_back(replay("align", p.id + "/p2", alignment_json(spec.map2, spec.wrong2).dump(4)));
    for (const auto& o : spec.objects) {
      Json loc = Json::object();
      for (const auto& [n, b] : o.texts) loc[n] = Json::array({b.x1, b.y1, b.x2, b.y2});
      loc["structure"] = Json::array({o.structure.x1, o.structure.y1, o.structure.x2, o.structure.y2});
      records.push_back(replay("localize", p.id + "/" + o.name, "```json\n" + loc.dump(2) + "\n```"));
    }
    records.push_back(replay(
        "planning", p.id,
        Json{{"caption", fmt::format("A {}x{} diagram with labelled regions.", p.width, p.height)},
             {"rationale", "Locate the region the question refers to, read its value, then verify it."}}
            .dump()));
  }
  records.push_back(replay("guide", "*", "Guide: \\boxed{Which region of the figure should be checked next?}"));
  fx.manifest = dir / "manifest.jsonl";
  fx.replay = dir / "replay.jsonl";
  fx.config = dir / "config.json";
  write_file(fx.manifest, to_jsonl(manifest));
  write_file(fx.replay, to_jsonl(records));
  write_file(fx.config, Json{{"seed", 7}, {"paths", {{"workdir", "work"}}}}.dump(2) + "\n");
  return fx;
}

curation::ComposeDraft example_draft(int width, int height, double f_minus, double f_plus) {
  using curation::GroundedCru;
  using curation::PathSource;
  auto spec = layout_spec(Layout::Nested, width, height);
  auto box = [&](int i) { return spec.objects.at(static_cast<std::size_t>(i)).fused(); };
  auto name = [&](int i) { return spec.objects.at(static_cast<std::size_t>(i)).name; };
  curation::ComposeDraft d;
  d.id = "draft";
  d.question = "What is the value of the marked angle?";
  d.answer = "B";
  d.width = width;
  d.height = height;
  d.f_minus = f_minus;
  d.f_plus = f_plus;
  d.planning = {"A triangle with one marked angle.", "Read the marked angle, then compute the remaining one."};
  d.planning_guide = "Where is the marked angle?";
  d.units = {
      GroundedCru{{spec.p1[0].think}, name(0), box(0), "Which angle is marked?", PathSource::P1, false},
      GroundedCru{{spec.p1[1].think}, name(1), box(1), std::nullopt, PathSource::P1, true},
      GroundedCru{{spec.p2[0].think}, name(0), box(0), std::nullopt, PathSource::P2, true},
      GroundedCru{{spec.p0[0].think, spec.p0[1].think}, name(0), box(0), "What does the angle read?", PathSource::P0,
                  false},
      GroundedCru{{spec.p0[2].think}, name(1), box(1), "What remains to compute?", PathSource::P0, false},
      GroundedCru{{spec.p0[3].think}, name(2), box(2), std::nullopt, PathSource::P0, false},
  };
  return d;
}

// ---- hard-subset corpus ----

SmallRegion hardset_kind(std::size_t sample) {
  switch (sample % 6) {
    case 0:
    case 1:
    case 2: return SmallRegion::Crop;
    case 3: return SmallRegion::Scale;
    case 4: return SmallRegion::Display;
    default: return SmallRegion::None;
  }
}

std::vector<Trajectory> hardset_corpus() {
  std::vector<Trajectory> out;
  for (std::size_t s = 0; s < 30; ++s) {
    const bool small = s % 4 == 3;
    const int w = small ? 392 : 504, h = small ? 360 : 504;
    ImageStore store = ImageStore::shapes_only(w, h);
    Trajectory t;
    t.id = fmt::format("h{:02}", s);
    t.question = fmt::format("Hard-subset question {}?", s);
    t.original = ObservationRef{0, w, h};
    int turn = 0;
    auto think = [&] {
      const std::size_t words = 6 + (s * 11 + static_cast<std::size_t>(turn) * 5) % 17;
      std::vector<std::string> parts;
      for (std::size_t i = 0; i < words; ++i) parts.push_back(fmt::format("w{}", (s + i) % 9));
      ++turn;
      return join(parts, " ");
    };
    auto call = [&](ToolCall c) {
      t.turns.push_back(Turn{think(), ToolAction{c}});
      t.observations.push_back(store.exec(c));
    };
    call(Crop{BBox{0, 0, w * 2 / 3, h / 3}, 0});
    switch (hardset_kind(s)) {
      case SmallRegion::Crop: call(Crop{BBox{200, 200, 304, 306}, 0}); break;
      case SmallRegion::Scale: call(Scale{0.25, 0}); break;
      case SmallRegion::Display: {
        call(Crop{BBox{200, 200, 304, 306}, 0});
        call(Display{t.observations.back().index});
        break;
      }
      case SmallRegion::None: call(Crop{BBox{w / 4, h / 4, w * 3 / 4, h * 3 / 4}, 0}); break;
    }
    for (std::size_t e = 0; e < s % 3; ++e) call(Crop{BBox{0, 0, w * 3 / 4, h * 3 / 4}, 0});
    t.turns.push_back(Turn{think(), AnswerAction{fmt::format("A{}", s % 5)}});
    t.final_answer = fmt::format("A{}", s % 5);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace cruforge::fixtures
