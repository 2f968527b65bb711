// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cruforge/cli.hpp"
#include "cruforge/curation.hpp"
#include "cruforge/error.hpp"
#include "cruforge/evalkit.hpp"
#include "cruforge/hardset.hpp"
#include "cruforge/rollout.hpp"
#include "cruforge/trajectory_io.hpp"

namespace cruforge::cli {

namespace {

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> workdir;
  int jobs = 1;
  std::string log_level = "warn";
};

// Backends for every role: one replay file, or the configured endpoints wrapped with seeding.
struct Backends {
  std::unique_ptr<ChatBackend> replay;
  std::unique_ptr<ChatBackend> policy_remote, text_remote, vision_remote;
  std::unique_ptr<SeededBackend> policy, text, vision;

  Backends(const Config& cfg, const std::string& scripted, bool need_policy, bool need_judges) {
    if (!scripted.empty()) {
      if (!std::filesystem::exists(scripted)) throw InputError("MissingInput", "replay file not found: " + scripted);
      replay = std::make_unique<ReplayBackend>(scripted);
      policy = std::make_unique<SeededBackend>(*replay, cfg.seed);
      text = std::make_unique<SeededBackend>(*replay, cfg.seed);
      vision = std::make_unique<SeededBackend>(*replay, cfg.seed);
      return;
    }
    if (need_policy) {
      policy_remote = make_remote(cfg.policy, "policy");
      policy = std::make_unique<SeededBackend>(*policy_remote, cfg.seed);
    }
    if (need_judges) {
      text_remote = make_remote(cfg.judge_text, "judge_text");
      vision_remote = make_remote(cfg.judge_vision, "judge_vision");
      text = std::make_unique<SeededBackend>(*text_remote, cfg.seed);
      vision = std::make_unique<SeededBackend>(*vision_remote, cfg.seed);
    }
  }
};

Config effective_config(const Globals& g) {
  Config cfg = load_config(g.config ? std::optional<std::filesystem::path>(*g.config) : std::nullopt);
  if (g.seed) cfg.seed = *g.seed;
  if (g.workdir) cfg.workdir = *g.workdir;
  cfg.validate();
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (!std::filesystem::exists(path)) throw InputError("MissingInput", what + " not found: " + path);
}

void write_meta(const std::filesystem::path& out, const Config& cfg, const std::string& command) {
  Json meta{{"command", command}, {"seed", cfg.seed}, {"config", cfg.canonical()}};
  write_file(out.string() + ".meta.json", meta.dump(2) + "\n");
}

// ---- rollout ----

struct RolloutArgs {
  std::string manifest, scripted, out = "trajectories.jsonl";
  bool text_only = false;
};

int cmd_rollout(const Globals& g, const RolloutArgs& a, std::ostream& out) {
  Config cfg = effective_config(g);
  auto manifest = load_manifest(a.manifest);
  Backends b(cfg, a.scripted, true, false);
  EpisodeLimits limits{cfg.max_turns, cfg.max_response_tokens, a.text_only};
  std::vector<Json> records(manifest.size());
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(manifest.size());
  auto worker = [&] {
    for (std::size_t i = next++; i < manifest.size(); i = next++) {
      try {
        const auto& m = manifest[i];
        EpisodeOptions opt;
        opt.episode_id = m.id;
        opt.display = cfg.display;
        opt.seed = derive_seed(cfg.seed, m.id);
        Episode ep = run_episode(*b.policy, m.question, std::filesystem::path(m.image_path), limits, opt);
        Json j = trajectory_to_json(ep.trajectory);
        if (!m.answer.empty()) j["ground_truth_answer"] = m.answer;
        records[i] = std::move(j);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, g.jobs));
  if (n == 1) {
    worker();
  } else {
    for (std::size_t t = 0; t < std::min(n, manifest.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  write_file(a.out, to_jsonl(records));
  write_meta(a.out, cfg, "rollout");
  std::size_t answered = 0, format_errors = 0, tool_errors = 0;
  for (const auto& r : records) {
    answered += r["answer"].is_null() ? 0 : 1;
    format_errors += r["format_error"].is_null() ? 0 : 1;
    tool_errors += r["tool_error"].is_null() ? 0 : 1;
  }
  out << fmt::format("{} episodes: {} answered, {} format errors, {} tool errors -> {}\n", records.size(), answered,
                     format_errors, tool_errors, a.out);
  return 0;
}

// ---- curate ----

struct CurateArgs {
  std::string manifest, scripted, stage = "all";
};

int cmd_curate(const Globals& g, const CurateArgs& a, std::ostream& out) {
  Config cfg = effective_config(g);
  auto stage = stage_from_string(a.stage);
  if (!stage) throw InputError("BadFlag", "unknown stage " + a.stage);
  require_file(a.manifest, "manifest");
  Backends b(cfg, a.scripted, true, true);
  CurateClients clients{*b.policy, *b.text, *b.text, *b.vision};
  CurateOptions opt{a.manifest, cfg.workdir, *stage, g.jobs, cfg};
  auto summary = run_curate(opt, clients);
  out << fmt::format("run {}\n", summary.run_key);
  for (const auto& [s, n] : summary.kept) out << fmt::format("  kept after {}: {}\n", s, n);
  for (const auto& [code, n] : summary.dropped) out << fmt::format("  dropped {}: {}\n", code, n);
  for (const auto& p : summary.outputs) out << "  wrote " << p.string() << "\n";
  return 0;
}

// ---- reward ----

struct RewardArgs {
  std::string group, out = "advantages.json";
};

int cmd_reward(const Globals& g, const RewardArgs& a, std::ostream& out) {
  Config cfg = effective_config(g);
  require_file(a.group, "reward group");
  Json j = Json::parse(read_file(a.group), nullptr, false);
  if (j.is_discarded()) throw InputError("MalformedInput", a.group + " is not valid JSON");
  if (j.is_object() && j.contains("rewards")) j = j["rewards"];
  if (!j.is_array()) throw InputError("MalformedInput", "expected an array of rewards");
  std::vector<double> rewards;
  for (const auto& r : j) {
    if (r.is_number())
      rewards.push_back(r.get<double>());
    else if (r.is_object() && r.contains("total") && r["total"].is_number())
      rewards.push_back(r["total"].get<double>());
    else
      throw InputError("MalformedInput", "rewards must be numbers or breakdowns with a total");
  }
  std::vector<double> adv;
  try {
    adv = strategy::group_advantages(rewards);
  } catch (const Error& e) {
    throw InputError(e.code(), e.what());
  }
  Json result{{"rewards", rewards}, {"advantages", adv}};
  write_file(a.out, result.dump(2) + "\n");
  write_meta(a.out, cfg, "reward");
  out << fmt::format("{} rewards -> {}\n", rewards.size(), a.out);
  return 0;
}

// ---- hardset ----

struct HardsetArgs {
  std::string input, out = "hardset.jsonl";
  std::size_t total = 0;
};

int cmd_hardset(const Globals& g, const HardsetArgs& a, std::ostream& out, std::ostream& err) {
  Config cfg = effective_config(g);
  require_file(a.input, "dataset");
  auto dataset = load_trajectories(a.input);
  strategy::HardSubset hs;
  try {
    hs = strategy::build_hard_subset(dataset, a.total);
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw InputError(e.code(), e.what());
  }
  std::vector<Json> records;
  std::size_t lr = 0, cr = 0;
  for (const auto& f : hs.fragments) {
    strategy::replay_prefix(f.prefix);
    records.push_back(f.to_json());
    (f.origin == strategy::FragmentOrigin::LongReasoning ? lr : cr) += 1;
  }
  for (const auto& w : hs.warnings) err << "warning: " << w << "\n";
  write_file(a.out, to_jsonl(records));
  write_meta(a.out, cfg, "hardset");
  out << fmt::format("{} fragments ({} long-reasoning, {} critical-region) -> {}\n", records.size(), lr, cr, a.out);
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string benchmark, name = "benchmark", scripted, predictions, out = "eval_report.json", records;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
  Config cfg = effective_config(g);
  require_file(a.benchmark, "benchmark");
  auto items = evalkit::load_benchmark(a.benchmark, a.name);
  const auto base = std::filesystem::absolute(a.benchmark).parent_path();
  std::map<std::string, Trajectory> stored;
  if (!a.predictions.empty()) {
    require_file(a.predictions, "predictions");
    for (auto& t : load_trajectories(a.predictions)) stored.emplace(t.id, std::move(t));
  }
  Backends b(cfg, a.scripted, a.predictions.empty(), true);
  EpisodeLimits limits{cfg.max_turns, cfg.max_response_tokens, false};

  std::vector<evalkit::EvalRecord> records;
  std::map<std::string, std::vector<std::string>> declared;
  for (const auto& item : items) {
    declared[item.benchmark].push_back(item.category);
    std::string prediction, trajectory_id = a.name + "/" + item.id;
    if (!a.predictions.empty()) {
      auto it = stored.find(item.id);
      if (it == stored.end()) throw InputError("MissingInput", "no stored trajectory for " + item.id);
      prediction = it->second.final_answer.value_or("");
      trajectory_id = it->second.id;
    } else {
      EpisodeOptions opt;
      opt.episode_id = trajectory_id;
      opt.display = cfg.display;
      opt.seed = derive_seed(cfg.seed, trajectory_id);
      std::filesystem::path img = item.image_path;
      if (img.is_relative()) img = base / img;
      Episode ep = run_episode(*b.policy, item.question, img, limits, opt);
      prediction = ep.trajectory.final_answer.value_or("");
    }
    records.push_back(evalkit::judge_item(*b.text, item, prediction, trajectory_id));
  }
  for (auto& [k, v] : declared) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }
  auto table = evalkit::aggregate(records, declared);
  write_file(a.out, table.to_json().dump(2) + "\n");
  write_meta(a.out, cfg, "eval");
  if (!a.records.empty()) {
    std::vector<Json> rj;
    for (const auto& r : records) rj.push_back(r.to_json());
    write_file(a.records, to_jsonl(rj));
  }
  out << table.to_text();
  return 0;
}

// ---- stats / export ----

struct StatsArgs {
  std::string input, out;
};

int cmd_stats(const Globals&, const StatsArgs& a, std::ostream& out) {
  require_file(a.input, "dataset");
  auto stats = curation::pattern_stats(load_trajectories(a.input));
  if (!a.out.empty()) write_file(a.out, stats.to_json().dump(2) + "\n");
  out << fmt::format("samples      {}\n", stats.samples);
  out << fmt::format("crop         {}\nscale        {}\ndisplay      {}\n", stats.crop, stats.scale, stats.display);
  for (PatternLabel l : {PatternLabel::Planning, PatternLabel::Reflecting, PatternLabel::Verifying,
                         PatternLabel::Backtracking}) {
    auto it = stats.labels.find(l);
    out << fmt::format("{:<12} {}\n", to_string(l), it == stats.labels.end() ? 0 : it->second);
  }
  out << fmt::format("crus/path    min {} max {} mean {:.2f}\n", stats.cru_min, stats.cru_max, stats.cru_mean);
  return 0;
}

struct ExportArgs {
  std::string input, stage = "practice", out = "sft.jsonl";
};

int cmd_export(const Globals&, const ExportArgs& a, std::ostream& out) {
  require_file(a.input, "dataset");
  curation::SftStage stage;
  if (a.stage == "instructional")
    stage = curation::SftStage::Instructional;
  else if (a.stage == "practice")
    stage = curation::SftStage::Practice;
  else
    throw InputError("BadFlag", "stage must be instructional or practice");
  std::vector<Json> records;
  try {
    records = curation::export_sft(load_trajectories(a.input), stage);
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw InputError(e.code(), e.what());
  }
  write_file(a.out, to_jsonl(records));
  out << fmt::format("{} {} records -> {}\n", records.size(), a.stage, a.out);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"cruforge: multimodal reasoning-path curation, rollout and evaluation toolkit", "cruforge"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file (default: $CRUFORGE_CONFIG)");
  app.add_option("--seed", g.seed, "Override the configured seed");
  app.add_option("--workdir", g.workdir, "Override the configured work directory");
  app.add_option("--jobs", g.jobs, "Parallel workers")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off");

  RolloutArgs ra;
  auto* rollout = app.add_subcommand("rollout", "Run tool-use episodes over a manifest");
  rollout->add_option("--manifest", ra.manifest, "JSONL of {id, image_path, question}")->required();
  rollout->add_option("--scripted", ra.scripted, "Replay file used instead of the remote policy");
  rollout->add_flag("--text-only", ra.text_only, "Emergency mode: tool calls are not executed");
  rollout->add_option("--out", ra.out, "Trajectory JSONL output");

  CurateArgs ca;
  auto* curate = app.add_subcommand("curate", "Run curation stages");
  curate->add_option("--manifest", ca.manifest, "JSONL of {id, image_path, question, ground_truth_answer}")
      ->required();
  curate->add_option("--stage", ca.stage, "sample|map|ground|compose|all");
  curate->add_option("--scripted", ca.scripted, "Replay file used for every client");

  RewardArgs rwa;
  auto* reward = app.add_subcommand("reward", "Group-normalized advantages for a reward group");
  reward->add_option("--group", rwa.group, "JSON array of rewards or breakdowns")->required();
  reward->add_option("--out", rwa.out, "Output JSON");

  HardsetArgs ha;
  auto* hardset = app.add_subcommand("hardset", "Build the truncated hard subset");
  hardset->add_option("--input", ha.input, "Trajectory or composed-path JSONL")->required();
  hardset->add_option("--total", ha.total, "Number of fragments (even)")->required();
  hardset->add_option("--out", ha.out, "Fragment JSONL output");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Judge a benchmark and aggregate accuracy");
  eval->add_option("--benchmark", ea.benchmark, "JSONL of {image_path, question, answer, category}")->required();
  eval->add_option("--name", ea.name, "Benchmark name");
  eval->add_option("--scripted", ea.scripted, "Replay file used for policy and judge");
  eval->add_option("--predictions", ea.predictions, "Stored trajectories to judge instead of running the policy");
  eval->add_option("--out", ea.out, "Report JSON");
  eval->add_option("--records", ea.records, "Per-item verdict JSONL");

  StatsArgs sa;
  auto* stats = app.add_subcommand("stats", "Tool and pattern counts of a dataset");
  stats->add_option("--input", sa.input, "Trajectory or composed-path JSONL")->required();
  stats->add_option("--out", sa.out, "Stats JSON");

  ExportArgs xa;
  auto* exp = app.add_subcommand("export", "SFT records from composed paths");
  exp->add_option("--input", xa.input, "Composed-path JSONL with cached observations")->required();
  exp->add_option("--stage", xa.stage, "instructional|practice");
  exp->add_option("--out", xa.out, "SFT JSONL output");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  spdlog::set_level(spdlog::level::from_str(g.log_level));
  try {
    if (*rollout) return cmd_rollout(g, ra, out);
    if (*curate) return cmd_curate(g, ca, out);
    if (*reward) return cmd_reward(g, rwa, out);
    if (*hardset) return cmd_hardset(g, ha, out, err);
    if (*eval) return cmd_eval(g, ea, out);
    if (*stats) return cmd_stats(g, sa, out);
    if (*exp) return cmd_export(g, xa, out);
  } catch (const InputError& e) {
    err << "error [" << e.code() << "]: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error [" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace cruforge::cli
