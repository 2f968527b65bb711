// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>

#include "cruforge/error.hpp"
#include "cruforge/rollout.hpp"
#include "fixtures.hpp"
#include "testkit.hpp"

using namespace cruforge;

namespace {

std::string tool_output(const std::string& think, const ToolCall& call) {
  return serialize_turn(Turn{think, ToolAction{call}});
}

std::string answer_output(const std::string& think, const std::string& answer) {
  return serialize_turn(Turn{think, AnswerAction{answer}});
}

ReplayBackend script(const std::string& episode, const std::vector<std::string>& outputs) {
  ReplayBackend b;
  for (std::size_t i = 0; i < outputs.size(); ++i) b.add_policy(episode, static_cast<int>(i), outputs[i]);
  return b;
}

}  // namespace

TEST_CASE("printed GeoQA trace replays to an answered episode") {
  auto fx = fixtures::load_trace("geoqa");
  ReplayBackend backend = script("geoqa", fx.outputs);
  EpisodeOptions opts;
  opts.episode_id = "geoqa";
  opts.display = fx.display;
  Episode ep = run_episode(backend, fx.question, testkit::pattern_image(fx.width, fx.height, 1), EpisodeLimits{}, opts);
  const Trajectory& t = ep.trajectory;
  CHECK_FALSE(t.format_error);
  CHECK_FALSE(t.tool_error);
  REQUIRE(t.final_answer);
  CHECK(*t.final_answer == fx.answer);
  CHECK(t.turns.size() == fx.outputs.size());
  CHECK(t.observations.size() == fx.outputs.size() - 1);
  CHECK(ep.store.size() == fx.outputs.size());
  CHECK(to_crus(t).size() == fx.outputs.size());
  // system, query, then assistant + observation pairs, then the answer
  CHECK(ep.messages.size() == 2 + 2 * (fx.outputs.size() - 1) + 1);
}

TEST_CASE("episode stops at the turn limit") {
  ReplayBackend backend;
  for (int i = 0; i < 10; ++i) backend.add_policy("e", i, tool_output("look", Display{0}));
  EpisodeOptions opts;
  opts.episode_id = "e";
  Episode ep = run_episode(backend, "q", testkit::pattern_image(40, 40, 2), EpisodeLimits{3, 512, false}, opts);
  CHECK(ep.trajectory.turns.size() == 3);
  CHECK_FALSE(ep.trajectory.final_answer);
  CHECK(ep.trajectory.observations.size() == 3);
}

TEST_CASE("format error ends the episode and keeps the raw output") {
  ReplayBackend backend = script("e", {tool_output("a", Display{0}), "<think>oops</think> no action"});
  EpisodeOptions opts;
  opts.episode_id = "e";
  Episode ep = run_episode(backend, "q", testkit::pattern_image(40, 40, 2), EpisodeLimits{}, opts);
  REQUIRE(ep.trajectory.format_error);
  CHECK(ep.trajectory.format_error->reason == FormatReason::StrayText);
  CHECK(ep.trajectory.turns.size() == 1);
  CHECK(ep.trajectory.raw_outputs.size() == 2);
}

TEST_CASE("tool error ends the episode") {
  ReplayBackend backend = script("e", {tool_output("a", Crop{BBox{0, 0, 41, 10}, 0}), answer_output("b", "A")});
  EpisodeOptions opts;
  opts.episode_id = "e";
  Episode ep = run_episode(backend, "q", testkit::pattern_image(40, 40, 2), EpisodeLimits{}, opts);
  REQUIRE(ep.trajectory.tool_error);
  CHECK(ep.trajectory.tool_error->rfind("BboxOutOfBounds", 0) == 0);
  CHECK(ep.trajectory.observations.empty());
  CHECK(ep.trajectory.turns.size() == 1);
  CHECK_NOTHROW(to_crus(ep.trajectory));
}

TEST_CASE("text-only episodes skip tool execution and carry the emergency prompt") {
  ReplayBackend backend =
      script("e", {tool_output("a", Crop{BBox{0, 0, 999, 999}, 0}), tool_output("b", Display{5}), answer_output("c", "B")});
  EpisodeOptions opts;
  opts.episode_id = "e";
  Episode ep = run_episode(backend, "q", testkit::pattern_image(40, 40, 2), EpisodeLimits{16, 512, true}, opts);
  CHECK(ep.trajectory.final_answer == std::optional<std::string>("B"));
  CHECK(ep.trajectory.observations.empty());
  CHECK(ep.messages.front().joined_text() == render_system_prompt(true));
  for (std::size_t i = 2; i < ep.messages.size(); ++i) CHECK(ep.messages[i].role == Role::Assistant);
}

TEST_CASE("responses are cut to the token budget before parsing") {
  ReplayBackend backend = script("e", {answer_output("one two three four five six", "A")});
  EpisodeOptions opts;
  opts.episode_id = "e";
  Episode ep = run_episode(backend, "q", testkit::pattern_image(40, 40, 2), EpisodeLimits{16, 3, false}, opts);
  REQUIRE(ep.trajectory.format_error);
  CHECK(ep.trajectory.raw_outputs.size() == 1);
  CHECK(ep.messages.back().joined_text() == truncate_tokens(ep.trajectory.raw_outputs[0], 3));
}

TEST_CASE("replay lookup fallbacks") {
  ReplayBackend b;
  b.add_policy("e", 0, "first");
  b.add_policy("e", 1, "retry", 0, 2);
  b.add("judge", "k", "yes");
  b.add("guide", "*", "any");
  ChatRequest r;
  r.episode = "e";
  r.sample = 3;
  CHECK(b.generate(r) == "first");
  r.turn = 1;
  r.attempt = 2;
  CHECK(b.generate(r) == "retry");
  r.attempt = 1;
  CHECK_THROWS_AS(b.generate(r), BackendUnavailable);
  ChatRequest j;
  j.tag = "judge";
  j.key = "k";
  j.attempt = 4;
  CHECK(b.generate(j) == "yes");
  j.key = "other";
  CHECK_THROWS_AS(b.generate(j), BackendUnavailable);
  j.tag = "guide";
  CHECK(b.generate(j) == "any");
}

TEST_CASE("replay files load from JSONL") {
  testkit::TempDir dir;
  {
    std::ofstream f(dir / "r.jsonl");
    f << R"({"tag": "judge", "key": "a", "output": "x"})" << "\n";
    f << R"({"episode": "e", "turn": 2, "sample": 1, "output": "y"})" << "\n";
  }
  ReplayBackend b(dir / "r.jsonl");
  CHECK(b.size() == 2);
  ChatRequest r;
  r.episode = "e";
  r.turn = 2;
  r.sample = 1;
  CHECK(b.generate(r) == "y");
  std::ofstream(dir / "bad.jsonl") << "{not json\n";
  CHECK_THROWS_AS(ReplayBackend(dir / "bad.jsonl"), InputError);
}

TEST_CASE("sample_group classifies rollouts and isolates their stores") {
  HistoryState state = HistoryState::start("h", "q", testkit::pattern_image(60, 60, 3));
  state.advance(Turn{"zoom", ToolAction{Crop{BBox{0, 0, 30, 30}, 0}}});
  REQUIRE(state.store.size() == 2);
  ReplayBackend b;
  b.add_policy("h", 1, tool_output("c", Crop{BBox{0, 0, 10, 10}, 1}), 0);
  b.add_policy("h", 1, answer_output("d", "A"), 1);
  b.add_policy("h", 1, "garbage", 2);
  b.add_policy("h", 1, tool_output("e", Crop{BBox{0, 0, 31, 10}, 1}), 3);
  auto group = sample_group(b, state, 4);
  REQUIRE(group.size() == 4);
  CHECK(group[0].kind == RolloutKind::Cru);
  CHECK(group[0].observation == ObservationRef{2, 10, 10});
  CHECK(group[0].store.size() == 3);
  CHECK(group[1].kind == RolloutKind::Answer);
  CHECK(group[2].kind == RolloutKind::Invalid);
  CHECK(group[3].kind == RolloutKind::Invalid);
  CHECK(group[3].tool_error);
  CHECK(state.store.size() == 2);
  CHECK_THROWS_AS(sample_group(b, state, 1), Error);
}

TEST_CASE("history state rejects answer turns") {
  HistoryState state = HistoryState::start("h", "q", testkit::pattern_image(20, 20, 3));
  CHECK(state.crus().empty());
  CHECK_THROWS(state.advance(Turn{"x", AnswerAction{"A"}}));
}

TEST_CASE("seeded episodes give the same seeds per request") {
  std::vector<std::uint64_t> seen;
  FunctionBackend b([&](const ChatRequest& r) {
    seen.push_back(r.seed.value_or(0));
    return r.turn < 2 ? tool_output("t", Display{0}) : answer_output("a", "A");
  });
  EpisodeOptions opts;
  opts.episode_id = "s";
  opts.seed = 9;
  run_episode(b, "q", testkit::pattern_image(20, 20, 3), EpisodeLimits{}, opts);
  auto first = seen;
  seen.clear();
  run_episode(b, "q", testkit::pattern_image(20, 20, 3), EpisodeLimits{}, opts);
  CHECK(seen == first);
  CHECK(first.size() == 3);
  CHECK(first[0] != first[1]);
}

TEST_CASE("transcript reproduces the episode messages") {
  auto fx = fixtures::load_trace("crux_example");
  ReplayBackend backend = script("c", fx.outputs);
  EpisodeOptions opts;
  opts.episode_id = "c";
  Episode ep = run_episode(backend, fx.question, testkit::pattern_image(fx.width, fx.height, 4), EpisodeLimits{}, opts);
  auto ms = transcript_messages(ep.trajectory, &ep.store);
  REQUIRE(ms.size() == ep.messages.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    CHECK(ms[i].role == ep.messages[i].role);
    CHECK(ms[i].joined_text() == ep.messages[i].joined_text());
    CHECK(ms[i].image_count() == ep.messages[i].image_count());
  }
}
