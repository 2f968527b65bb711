// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <exception>
#include <set>
#include <thread>
#include <variant>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cruforge/cli.hpp"
#include "cruforge/curation.hpp"
#include "cruforge/error.hpp"
#include "cruforge/image.hpp"
#include "cruforge/trajectory_io.hpp"

namespace cruforge::cli {

using namespace curation;

namespace {

struct Drop {
  std::string code;
  std::string detail;
};

using Outcome = std::variant<Json, Drop>;

// Runs f(i) for every index on up to jobs threads; results keep input order.
template <class F>
std::vector<Outcome> parallel_map(std::size_t n, int jobs, F f) {
  std::vector<Outcome> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = f(i);
      } catch (const BackendUnavailable&) {
        errors[i] = std::current_exception();
      } catch (const Error& e) {
        out[i] = Drop{e.code(), e.what()};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, jobs));
  if (threads == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

Json box_json(const BBox& b) { return Json::array({b.x1, b.y1, b.x2, b.y2}); }
BBox box_from(const Json& j) { return BBox{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()}; }

Json path_json(const SampledPath& p) {
  return Json{{"sample", p.sample},   {"nominal", p.nominal}, {"text", p.text},
              {"predicted", p.predicted}, {"correct", p.correct}};
}

SampledPath path_from(const Json& j) {
  return SampledPath{j.at("sample").get<int>(), j.at("nominal").get<double>(), j.at("text").get<std::string>(),
                     j.at("predicted").get<std::string>(), j.at("correct").get<bool>()};
}

Json steps_json(const std::vector<AnnotatedStep>& steps) {
  Json a = Json::array();
  for (const auto& s : steps) a.push_back({{"think", s.think}, {"object", s.object}});
  return a;
}

Json aligned_json(const AlignedPath& a) {
  Json mapping = Json::object();
  for (const auto& [w, c] : a.alignment.mapping) mapping[std::to_string(w)] = c;
  Json kept = Json::array();
  for (const auto& k : a.kept)
    kept.push_back({{"p0_cru", k.p0_cru}, {"object", k.object}, {"step_ids", k.step_ids}, {"steps", k.steps}});
  return Json{{"wrong_step", a.alignment.wrong_step}, {"mapping", mapping}, {"kept", kept}};
}

Json base_record(const Json& from) {
  Json j;
  for (const char* k : {"id", "question", "answer", "image_path", "width", "height"}) j[k] = from.at(k);
  return j;
}

ImagePart image_part(const std::shared_ptr<const Raster>& r) {
  return ImagePart{ObservationRef{0, r->width, r->height}, r, {}};
}

const ScaleVariant& variant_at(const std::vector<ScaleVariant>& vs, double nominal) {
  for (const auto& v : vs)
    if (v.nominal == nominal) return v;
  throw Error("MissingVariant", fmt::format("no variant at scale {}", nominal));
}

// ---- stages ----

Outcome do_sample(const ManifestEntry& m, const Config& cfg, CurateClients& c, Json& report) {
  Raster image = load_image(m.image_path);
  Json rec{{"id", m.id},
           {"question", m.question},
           {"answer", m.answer},
           {"image_path", m.image_path},
           {"width", image.width},
           {"height", image.height}};
  auto variants = make_scale_variants(image, cfg.patch_size);
  auto result = sample_paths(c.policy, c.judge, m.id, m.question, m.answer, variants, cfg.samples_per_scale);
  Json vs = Json::array();
  for (const auto& v : variants)
    vs.push_back({{"nominal", v.nominal},
                  {"factor", v.factor},
                  {"width", v.width},
                  {"height", v.height},
                  {"tokens", v.tokens},
                  {"adjusted", v.adjusted}});
  Json acc = Json::array();
  for (const auto& a : result.accuracy)
    acc.push_back({{"nominal", a.nominal}, {"correct", a.correct}, {"total", a.total}, {"accuracy", a.accuracy()}});
  rec["variants"] = vs;
  rec["accuracy"] = acc;
  report = Json{{"id", m.id}, {"accuracy", acc}, {"pair", nullptr}};

  auto pair = select_scale_pair(result.accuracy, variants);
  if (!pair) return Drop{"NoPair", "no scale pair reaches the accuracy gap"};
  Json pj{{"f_minus", pair->f_minus}, {"f_plus", pair->f_plus}, {"gap", pair->gap}, {"pixel_ratio", pair->pixel_ratio}};
  report["pair"] = pj;
  rec["pair"] = pj;
  BasePaths base = pick_base_paths(result.paths, *pair);
  rec["paths"] = Json{{"p0", path_json(base.p0)}, {"p1", path_json(base.p1)}, {"p2", path_json(base.p2)}};
  return rec;
}

Outcome do_map(const Json& in, CurateClients& c) {
  const auto id = in.at("id").get<std::string>();
  const auto question = in.at("question").get<std::string>();
  const Json& paths = in.at("paths");
  auto s0 = decompose_steps(c.llm, id + "/p0", question, path_from(paths.at("p0")).text);
  auto s1 = decompose_steps(c.llm, id + "/p1", question, path_from(paths.at("p1")).text);
  auto s2 = decompose_steps(c.llm, id + "/p2", question, path_from(paths.at("p2")).text);
  auto crus = group_into_crus(s0);
  auto a1 = align_and_truncate(c.llm, id + "/p1", s0, crus, s1);
  auto a2 = align_and_truncate(c.llm, id + "/p2", s0, crus, s2);
  Json rec = base_record(in);
  rec["pair"] = in.at("pair");
  rec["variants"] = in.at("variants");
  rec["p0_text"] = path_from(paths.at("p0")).text;
  rec["steps"] = Json{{"p0", steps_json(s0)}, {"p1", steps_json(s1)}, {"p2", steps_json(s2)}};
  Json cj = Json::array();
  for (const auto& cru : crus) cj.push_back({{"object", cru.object}, {"step_ids", cru.step_ids}, {"steps", cru.steps}});
  rec["p0_crus"] = cj;
  rec["aligned"] = Json{{"p1", aligned_json(a1)}, {"p2", aligned_json(a2)}};
  return rec;
}

Outcome do_ground(const Json& in, const Config& cfg, CurateClients& c) {
  const auto id = in.at("id").get<std::string>();
  const auto question = in.at("question").get<std::string>();
  Raster image = load_image(in.at("image_path").get<std::string>());
  if (image.width != in.at("width").get<int>() || image.height != in.at("height").get<int>())
    throw InputError("ImageMismatch", id + ": image changed since sampling");
  auto variants = make_scale_variants(image, cfg.patch_size);
  const double f_minus = in.at("pair").at("f_minus").get<double>();
  const double f_plus = in.at("pair").at("f_plus").get<double>();
  const auto& v_minus = variant_at(variants, f_minus);
  const auto& v_plus = variant_at(variants, f_plus);
  auto original = std::make_shared<const Raster>(std::move(image));
  const ImagePart whole = image_part(original);

  std::map<std::string, BBox> boxes;
  auto box_for = [&](const std::string& object) {
    auto it = boxes.find(object);
    if (it == boxes.end()) it = boxes.emplace(object, ground_cru(c.vlm, id + "/" + object, whole, object)).first;
    return it->second;
  };

  Json units = Json::array();
  auto add = [&](const std::vector<std::string>& steps, const std::string& object, PathSource src, bool err) {
    units.push_back({{"source", to_string(src)},
                     {"focus_object", object},
                     {"bbox", box_json(box_for(object))},
                     {"steps", steps},
                     {"is_error", err}});
  };
  for (auto [key, src] : {std::pair{"p1", PathSource::P1}, std::pair{"p2", PathSource::P2}}) {
    const Json& kept = in.at("aligned").at(key).at("kept");
    for (std::size_t i = 0; i < kept.size(); ++i)
      add(kept[i].at("steps").get<std::vector<std::string>>(), kept[i].at("object").get<std::string>(), src,
          i + 1 == kept.size());
  }
  for (const auto& cru : in.at("p0_crus"))
    add(cru.at("steps").get<std::vector<std::string>>(), cru.at("object").get<std::string>(), PathSource::P0, false);

  Planning planning = gen_planning(c.vlm, id, image_part(v_plus.pixels), question, in.at("p0_text").get<std::string>());
  Json rec = base_record(in);
  rec["f_minus"] = v_minus.factor;
  rec["f_plus"] = v_plus.factor;
  rec["planning"] = Json{{"caption", planning.caption}, {"rationale", planning.rationale}};
  rec["units"] = units;
  return rec;
}

ComposeDraft draft_from(const Json& in, const Config& cfg) {
  ComposeDraft d;
  d.id = in.at("id").get<std::string>();
  d.question = in.at("question").get<std::string>();
  d.answer = in.at("answer").get<std::string>();
  d.width = in.at("width").get<int>();
  d.height = in.at("height").get<int>();
  d.f_minus = in.at("f_minus").get<double>();
  d.f_plus = in.at("f_plus").get<double>();
  d.planning = Planning{in.at("planning").at("caption").get<std::string>(),
                        in.at("planning").at("rationale").get<std::string>()};
  d.display = cfg.display;
  for (const auto& u : in.at("units")) {
    GroundedCru g;
    g.steps = u.at("steps").get<std::vector<std::string>>();
    g.focus_object = u.at("focus_object").get<std::string>();
    g.bbox = box_from(u.at("bbox"));
    auto src = path_source_from_string(u.at("source").get<std::string>());
    if (!src) throw InputError("MalformedInput", "unknown unit source");
    g.source = *src;
    g.is_error = u.at("is_error").get<bool>();
    d.units.push_back(std::move(g));
  }
  return d;
}

struct Composed {
  Json record;
  Trajectory trajectory;
};

Composed do_compose(const Json& in, const Config& cfg, CurateClients& c, const std::filesystem::path& workdir,
                    const std::filesystem::path& cache) {
  ComposeDraft d = draft_from(in, cfg);
  const auto units = guide_units(d);
  for (int slot : guide_slots(d)) {
    auto g = gen_guiding_question(c.llm, fmt::format("{}#{}", d.id, slot), d.question, d.planning, units, slot);
    if (slot == 1)
      d.planning_guide = std::move(g);
    else
      d.units[static_cast<std::size_t>(slot - 2)].guiding_question = std::move(g);
  }
  ComposedPath path = apply_patterns(d);
  auto issues = check_composed(path);
  if (!issues.empty()) throw Error("CompositionInvalid", d.id + ": " + join(issues, "; "));

  Raster original = load_image(in.at("image_path").get<std::string>());
  std::filesystem::create_directories(cache);
  Trajectory t = execute_composed(path, original, cache);
  for (auto& p : t.image_paths) {
    auto rel = std::filesystem::path(p).lexically_relative(workdir);
    if (!rel.empty() && *rel.begin() != "..") p = rel.generic_string();
  }
  Json j = composed_to_json(path);
  j["image_paths"] = t.image_paths;
  return Composed{std::move(j), std::move(t)};
}

// ---- persistence ----

std::vector<Json> read_stage(const std::filesystem::path& workdir, std::string_view stage, const std::string& key) {
  auto p = stage_file(workdir, stage, key);
  if (!std::filesystem::exists(p))
    throw InputError("MissingStageInput",
                     fmt::format("{} not found; run `curate --stage {}` with the same manifest and config first",
                                 p.string(), stage));
  return read_jsonl(p);
}

struct StageResult {
  std::vector<Json> kept;
  std::vector<Json> drops;
};

StageResult split(const std::vector<Outcome>& outcomes, const std::vector<std::string>& ids, std::string_view stage,
                  CurateSummary& summary) {
  StageResult r;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    if (const auto* j = std::get_if<Json>(&outcomes[i])) {
      r.kept.push_back(*j);
    } else {
      const auto& d = std::get<Drop>(outcomes[i]);
      r.drops.push_back({{"id", ids[i]}, {"stage", stage}, {"code", d.code}, {"detail", d.detail}});
      ++summary.dropped[d.code];
      spdlog::info("drop {} at {}: {} ({})", ids[i], stage, d.code, d.detail);
    }
  }
  summary.kept[std::string(stage)] = r.kept.size();
  return r;
}

void write_stage(const std::filesystem::path& workdir, std::string_view stage, const std::string& key,
                 const StageResult& r, CurateSummary& summary) {
  auto out = stage_file(workdir, stage, key);
  write_file(out, to_jsonl(r.kept));
  auto drops = stage_file(workdir, fmt::format("drops-{}", stage), key);
  write_file(drops, to_jsonl(r.drops));
  summary.outputs.push_back(out);
  summary.outputs.push_back(drops);
}

std::vector<std::string> ids_of(const std::vector<Json>& records) {
  std::vector<std::string> ids;
  for (const auto& r : records) ids.push_back(r.at("id").get<std::string>());
  return ids;
}

Json per_scale_summary(const std::vector<Json>& problems) {
  std::map<double, std::pair<int, int>> totals;
  for (const auto& p : problems)
    for (const auto& a : p.at("accuracy")) {
      auto& t = totals[a.at("nominal").get<double>()];
      t.first += a.at("correct").get<int>();
      t.second += a.at("total").get<int>();
    }
  Json out = Json::array();
  for (const auto& [nominal, t] : totals)
    out.push_back({{"nominal", nominal},
                   {"correct", t.first},
                   {"total", t.second},
                   {"accuracy", t.second == 0 ? 0.0 : static_cast<double>(t.first) / t.second}});
  return out;
}

}  // namespace

std::optional<Stage> stage_from_string(std::string_view s) {
  if (s == "sample") return Stage::Sample;
  if (s == "map") return Stage::Map;
  if (s == "ground") return Stage::Ground;
  if (s == "compose") return Stage::Compose;
  if (s == "all") return Stage::All;
  return std::nullopt;
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Sample: return "sample";
    case Stage::Map: return "map";
    case Stage::Ground: return "ground";
    case Stage::Compose: return "compose";
    case Stage::All: return "all";
  }
  return {};
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("MissingInput", "manifest not found: " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      ManifestEntry m;
      m.id = j.at("id").get<std::string>();
      std::filesystem::path img = j.at("image_path").get<std::string>();
      m.image_path = (img.is_relative() ? base / img : img).lexically_normal().string();
      m.question = j.at("question").get<std::string>();
      m.answer = j.value("ground_truth_answer", "");
      if (m.id.empty()) throw InputError("MalformedInput", "empty id");
      if (!seen.insert(m.id).second) throw InputError("MalformedInput", "duplicate id " + m.id);
      out.push_back(std::move(m));
    } catch (const Json::exception& e) {
      throw InputError("MalformedInput", fmt::format("{}:{}: {}", path.string(), line, e.what()));
    }
  }
  return out;
}

std::string run_key(const std::string& manifest_bytes, const Config& config) {
  return sha256_hex(manifest_bytes + "\n" + config.canonical().dump()).substr(0, 16);
}

std::filesystem::path stage_file(const std::filesystem::path& workdir, std::string_view stage, const std::string& key,
                                 std::string_view ext) {
  return workdir / fmt::format("{}-{}{}", stage, key, ext);
}

CurateSummary run_curate(const CurateOptions& options, CurateClients& clients) {
  const Config& cfg = options.config;
  auto manifest = load_manifest(options.manifest);
  CurateSummary summary;
  summary.run_key = run_key(read_file(options.manifest), cfg);
  const std::string& key = summary.run_key;
  const auto& workdir = options.workdir;
  std::filesystem::create_directories(workdir);
  const bool all = options.stage == Stage::All;
  spdlog::info("curate run {} stage {} over {} problems", key, to_string(options.stage), manifest.size());

  std::vector<Json> current;
  if (options.stage == Stage::Sample || all) {
    std::vector<Json> reports(manifest.size());
    std::vector<std::string> ids;
    for (const auto& m : manifest) ids.push_back(m.id);
    auto outcomes = parallel_map(manifest.size(), options.jobs, [&](std::size_t i) {
      return do_sample(manifest[i], cfg, clients, reports[i]);
    });
    auto r = split(outcomes, ids, "sample", summary);
    write_stage(workdir, "sample", key, r, summary);
    std::vector<Json> problems;
    for (auto& rep : reports)
      if (!rep.is_null()) problems.push_back(std::move(rep));
    Json report{{"per_scale", per_scale_summary(problems)}, {"problems", problems}};
    auto rp = stage_file(workdir, "sample-report", key, ".json");
    write_file(rp, report.dump(2) + "\n");
    summary.outputs.push_back(rp);
    current = std::move(r.kept);
  }
  if (options.stage == Stage::Map || all) {
    if (!all) current = read_stage(workdir, "sample", key);
    auto outcomes = parallel_map(current.size(), options.jobs, [&](std::size_t i) { return do_map(current[i], clients); });
    auto r = split(outcomes, ids_of(current), "map", summary);
    write_stage(workdir, "map", key, r, summary);
    current = std::move(r.kept);
  }
  if (options.stage == Stage::Ground || all) {
    if (!all) current = read_stage(workdir, "map", key);
    auto outcomes =
        parallel_map(current.size(), options.jobs, [&](std::size_t i) { return do_ground(current[i], cfg, clients); });
    auto r = split(outcomes, ids_of(current), "ground", summary);
    write_stage(workdir, "ground", key, r, summary);
    current = std::move(r.kept);
  }
  if (options.stage == Stage::Compose || all) {
    if (!all) current = read_stage(workdir, "ground", key);
    const auto cache = (cfg.cache.is_relative() ? workdir / cfg.cache : cfg.cache) / key;
    std::vector<Trajectory> trajectories(current.size());
    auto outcomes = parallel_map(current.size(), options.jobs, [&](std::size_t i) -> Outcome {
      auto c = do_compose(current[i], cfg, clients, workdir, cache);
      trajectories[i] = std::move(c.trajectory);
      return std::move(c.record);
    });
    auto r = split(outcomes, ids_of(current), "compose", summary);
    write_stage(workdir, "compose", key, r, summary);

    std::vector<Trajectory> kept;
    for (std::size_t i = 0; i < outcomes.size(); ++i)
      if (std::holds_alternative<Json>(outcomes[i])) kept.push_back(trajectories[i]);
    auto stats = stage_file(workdir, "stats", key, ".json");
    write_file(stats, pattern_stats(kept).to_json().dump(2) + "\n");
    summary.outputs.push_back(stats);
    for (auto stage : {SftStage::Instructional, SftStage::Practice}) {
      auto p = stage_file(workdir, fmt::format("sft-{}", curation::to_string(stage)), key);
      write_file(p, to_jsonl(export_sft(kept, stage)));
      summary.outputs.push_back(p);
    }
  }

  Json meta{{"run_key", key},
            {"stage", to_string(options.stage)},
            {"manifest_sha256", sha256_hex(read_file(options.manifest))},
            {"seed", cfg.seed},
            {"config", cfg.canonical()},
            {"kept", summary.kept},
            {"dropped", summary.dropped}};
  auto mp = stage_file(workdir, fmt::format("run-{}", to_string(options.stage)), key, ".json");
  write_file(mp, meta.dump(2) + "\n");
  summary.outputs.push_back(mp);
  return summary;
}

}  // namespace cruforge::cli
