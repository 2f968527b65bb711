// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "cruforge/error.hpp"
#include "cruforge/hardset.hpp"
#include "cruforge/strategy.hpp"
#include "fixtures.hpp"
#include "testkit.hpp"

using namespace cruforge;
using namespace cruforge::strategy;

namespace {

FunctionBackend constant(std::string reply) {
  return FunctionBackend([reply](const ChatRequest&) { return reply; });
}

HistoryState small_state() {
  HistoryState s = HistoryState::start("g", "What is shown?", testkit::pattern_image(80, 60, 7));
  s.advance(Turn{"look left", ToolAction{Crop{BBox{0, 0, 40, 60}, 0}}});
  return s;
}

Rollout rollout_of(const HistoryState& state, const std::string& text) {
  ReplayBackend b;
  b.add_policy(state.prefix.id, static_cast<int>(state.prefix.turns.size()), text, 0);
  b.add_policy(state.prefix.id, static_cast<int>(state.prefix.turns.size()), text, 1);
  return sample_group(b, state, 2).front();
}

std::size_t words(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

// Length written out independently: whitespace words plus ceil-divided patch grid per observation.
std::size_t length_oracle(const Trajectory& t) {
  std::size_t n = words(t.question);
  for (const auto& turn : t.turns) n += words(serialize_turn(turn));
  for (const auto& o : t.observations)
    n += static_cast<std::size_t>(((o.width + 27) / 28) * ((o.height + 27) / 28));
  return n;
}

}  // namespace

TEST_CASE("reward weights must leave room for the pattern bonus") {
  CHECK_NOTHROW(RewardWeights{}.validate());
  CHECK_NOTHROW((RewardWeights{0.45, 0.45}.validate()));
  CHECK_THROWS_AS((RewardWeights{0.5, 0.5}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((RewardWeights{-0.1, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("CRU reward combines the judge scores") {
  auto text = constant("coherent \\boxed{0.8}");
  auto vis = constant("\\boxed{0.6}");
  CruContext ctx;
  ctx.key = "k";
  ctx.invoked = ToolKind::Crop;
  auto b = score_cru(text, vis, ctx);
  CHECK(b.kind == RewardKind::Cru);
  CHECK(b.total == doctest::Approx(0.4 * 0.8 + 0.5 * 0.6));
  CHECK(b.pattern_bonus == 0.0);
  ctx.gt_tool = ToolKind::Crop;
  CHECK(score_cru(text, vis, ctx).total == doctest::Approx(0.4 * 0.8 + 0.5 * 0.6 + 0.1));
  ctx.gt_tool = ToolKind::Scale;
  CHECK(score_cru(text, vis, ctx).pattern_bonus == 0.0);
  auto bad = constant("\\boxed{1.5}");
  CHECK_THROWS_AS(score_cru(bad, vis, ctx), BadJudgeResponse);
}

TEST_CASE("property: rewards stay within their bounds") {
  testkit::Rng rng(31);
  for (int i = 0; i < 1000; ++i) {
    const double st = rng.uniform(0, 100) / 100.0, sv = rng.uniform(0, 100) / 100.0;
    auto text = constant(fmt::format("\\boxed{{{:.2f}}}", st));
    auto vis = constant(fmt::format("\\boxed{{{:.2f}}}", sv));
    CruContext ctx;
    ctx.invoked = static_cast<ToolKind>(rng.uniform(0, 2));
    if (rng.coin()) ctx.gt_tool = static_cast<ToolKind>(rng.uniform(0, 2));
    const double wt = rng.uniform(0, 90) / 100.0;
    RewardWeights w{wt, 0.9 - wt};
    auto b = score_cru(text, vis, ctx, w);
    CHECK(b.total >= 0.0);
    CHECK(b.total <= 1.0 + 1e-12);
    const double bonus = ctx.gt_tool && *ctx.gt_tool == ctx.invoked ? 0.1 : 0.0;
    CHECK(b.total == doctest::Approx(w.w_text * st + w.w_vis * sv + bonus));
  }
  auto one = constant("\\boxed{1}");
  CruContext ctx;
  ctx.gt_tool = ToolKind::Crop;
  CHECK(score_cru(one, one, ctx).total == doctest::Approx(1.0));
}

TEST_CASE("format failures score -1 without consulting any judge") {
  HistoryState state = small_state();
  auto reply = constant("\\boxed{1}");
  CountingBackend answer(reply), text(reply), vision(reply);
  Judges judges{answer, text, vision};
  RewardContext ctx{"k", "q", "A", std::nullopt, {}};
  testkit::Rng rng(32);
  for (int i = 0; i < 60; ++i) {
    auto m = testkit::mutate_turn(rng, testkit::random_turn(rng));
    auto b = total_reward(rollout_of(state, m.text), state, ctx, judges);
    CHECK(b.total == -1.0);
    CHECK(b.kind == RewardKind::Format);
  }
  auto tool_fail = total_reward(
      rollout_of(state, serialize_turn(Turn{"t", ToolAction{Crop{BBox{0, 0, 41, 10}, 1}}})), state, ctx, judges);
  CHECK(tool_fail.total == -1.0);
  CHECK(tool_fail.reason == "ToolError");
  CHECK(answer.calls() + text.calls() + vision.calls() == 0);
}

TEST_CASE("answer and CRU rollouts reach their judges") {
  HistoryState state = small_state();
  auto yes = constant("\\boxed{1}");
  auto half = constant("\\boxed{0.5}");
  CountingBackend answer(yes), text(half), vision(half);
  Judges judges{answer, text, vision};
  RewardContext ctx{"k", "q", "A", ToolKind::Scale, {}};
  auto a = total_reward(rollout_of(state, serialize_turn(Turn{"t", AnswerAction{"A"}})), state, ctx, judges);
  CHECK(a.kind == RewardKind::Answer);
  CHECK(a.total == 1.0);
  CHECK(answer.calls() == 1);
  auto c = total_reward(rollout_of(state, serialize_turn(Turn{"t", ToolAction{Scale{2.0, 1}}})), state, ctx, judges);
  CHECK(c.kind == RewardKind::Cru);
  CHECK(c.total == doctest::Approx(0.45 + 0.1));
  CHECK(text.calls() == 1);
  CHECK(vision.calls() == 1);
  CHECK(c.to_json()["pattern_bonus"] == 0.1);
}

TEST_CASE("group advantages examples") {
  auto a = group_advantages({1.0, 0.0});
  CHECK(a[0] == doctest::Approx(1.0));
  CHECK(a[1] == doctest::Approx(-1.0));
  auto b = group_advantages({1.0, 0.0, 0.0, 0.0});
  CHECK(b[0] == doctest::Approx(0.75 / std::sqrt(0.1875)));
  CHECK(b[1] == doctest::Approx(-0.25 / std::sqrt(0.1875)));
  CHECK(group_advantages({0.3, 0.3, 0.3}) == std::vector<double>{0, 0, 0});
  try {
    group_advantages({1.0});
    FAIL("expected GroupTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == "GroupTooSmall");
  }
}

TEST_CASE("property: advantages are centred and unit scaled") {
  testkit::Rng rng(33);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> r;
    const int g = rng.uniform(2, 16);
    for (int k = 0; k < g; ++k) r.push_back(rng.coin(0.2) ? -1.0 : rng.real(0.0, 1.0));
    auto a = group_advantages(r);
    if (std::all_of(r.begin(), r.end(), [&](double x) { return x == r[0]; })) {
      CHECK(a == std::vector<double>(r.size(), 0.0));
      continue;
    }
    double sum = 0, sq = 0;
    for (double x : a) {
      sum += x;
      sq += x * x;
    }
    CHECK(sum == doctest::Approx(0.0).epsilon(1e-9).scale(1.0));
    CHECK(sq / g == doctest::Approx(1.0));
    for (int k = 0; k + 1 < g; ++k)
      if (r[static_cast<std::size_t>(k)] > r[static_cast<std::size_t>(k + 1)])
        CHECK(a[static_cast<std::size_t>(k)] > a[static_cast<std::size_t>(k + 1)]);
  }
}

TEST_CASE("property: constant groups have zero advantages") {
  testkit::Rng rng(34);
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> r(static_cast<std::size_t>(rng.uniform(2, 16)), rng.real(-1.0, 1.0));
    CHECK(group_advantages(r) == std::vector<double>(r.size(), 0.0));
  }
}

TEST_CASE("clipped surrogate on a grid") {
  const double eps = 0.2;
  for (double r = 0.05; r < 3.0; r += 0.05)
    for (double a : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
      double expected = a >= 0 ? std::min(r, 1.0 + eps) * a : std::max(r, 1.0 - eps) * a;
      CHECK(grpo_clip_term(r, a, eps) == doctest::Approx(expected));
    }
  CHECK(grpo_clip_term(1.5, 1.0) == doctest::Approx(1.2));
  CHECK(grpo_clip_term(0.5, -1.0) == doctest::Approx(-0.8));
  CHECK(grpo_clip_term(0.5, 1.0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(grpo_clip_term(0.0, 1.0), std::invalid_argument);
}

TEST_CASE("loss mask partitions the transcript") {
  for (const auto& name : fixtures::trace_names()) {
    auto fx = fixtures::load_trace(name);
    ReplayBackend b;
    for (std::size_t i = 0; i < fx.outputs.size(); ++i) b.add_policy("m", static_cast<int>(i), fx.outputs[i]);
    EpisodeOptions opts;
    opts.episode_id = "m";
    Episode ep = run_episode(b, fx.question, testkit::pattern_image(fx.width, fx.height, 2), EpisodeLimits{}, opts);
    INFO(name);
    auto mask = loss_mask(ep.trajectory);
    auto messages = transcript_messages(ep.trajectory);
    const std::string flat = flatten_transcript(messages);
    std::size_t at = 0, observations = 0;
    std::string trained;
    for (const auto& seg : mask) {
      CHECK(seg.begin == at);
      CHECK(seg.end >= seg.begin);
      at = seg.end;
      CHECK(seg.trainable == (seg.role == Role::Assistant));
      CHECK_FALSE((seg.trainable && seg.observation));
      if (seg.trainable) trained += flat.substr(seg.begin, seg.end - seg.begin);
      if (seg.observation) {
        ++observations;
        const std::string text = flat.substr(seg.begin, seg.end - seg.begin);
        CHECK(text.find(kImagePlaceholder) != std::string::npos);
        CHECK(text.find("Image ") != std::string::npos);
      }
    }
    CHECK(at == flat.size());
    CHECK(observations == ep.trajectory.observations.size());
    std::string expected;
    for (const auto& t : ep.trajectory.turns) expected += serialize_turn(t);
    CHECK(trained == expected);
  }
}

TEST_CASE("hard-subset area arithmetic") {
  const double first = 336.0 * 168.0 / (504.0 * 504.0);
  const double small = 104.0 * 106.0 / (504.0 * 504.0);
  CHECK(first == doctest::Approx(0.2222).epsilon(1e-3));
  CHECK(first > kCriticalAreaRatio);
  CHECK(small < kCriticalAreaRatio);
}

TEST_CASE("tool quotas") {
  CHECK(tool_quotas(4, {20, 5, 5}) == std::vector<std::size_t>{2, 1, 1});
  CHECK(tool_quotas(5, {1, 9, 3}) == std::vector<std::size_t>{1, 2, 2});
  CHECK(tool_quotas(6, {0, 0, 0}) == std::vector<std::size_t>{2, 2, 2});
  CHECK(tool_quotas(2, {3, 3, 3}) == std::vector<std::size_t>{1, 1, 0});
}

TEST_CASE("hard subset on the synthetic corpus") {
  auto corpus = fixtures::hardset_corpus();
  REQUIRE(corpus.size() == 30);
  for (const auto& t : corpus) CHECK(length_metric(t) == length_oracle(t));

  auto subset = build_hard_subset(corpus, 8);
  REQUIRE(subset.fragments.size() == 8);
  CHECK(subset.warnings.empty());
  std::set<std::string> lr, cr;
  std::map<ToolKind, int> per_kind;
  for (const auto& f : subset.fragments) {
    CHECK_NOTHROW(replay_prefix(f.prefix));
    CHECK(f.prefix.turns.size() == f.cut_turn);
    CHECK_FALSE(f.prefix.final_answer);
    for (const auto& t : f.prefix.turns) CHECK(t.tool() != nullptr);
    const Trajectory& src = *std::find_if(corpus.begin(), corpus.end(), [&](const auto& t) { return t.id == f.sample_id; });
    if (f.origin == FragmentOrigin::LongReasoning) {
      lr.insert(f.sample_id);
      CHECK(f.cut_turn == src.turns.size() - 1);
      CHECK_FALSE(f.next_tool);
    } else {
      cr.insert(f.sample_id);
      REQUIRE(f.next_tool);
      ++per_kind[*f.next_tool];
      CHECK(f.area_ratio < kCriticalAreaRatio);
      const std::size_t sample = static_cast<std::size_t>(std::stoi(f.sample_id.substr(1)));
      const auto kind = fixtures::hardset_kind(sample);
      CHECK(kind != fixtures::SmallRegion::None);
      const ToolKind want = kind == fixtures::SmallRegion::Scale     ? ToolKind::Scale
                            : kind == fixtures::SmallRegion::Display ? ToolKind::Display
                                                                     : ToolKind::Crop;
      CHECK(*f.next_tool == want);
      CHECK(tool_kind(*src.turns[f.cut_turn].tool()) == want);
    }
  }
  CHECK(lr.size() == 4);
  CHECK(cr.size() == 4);
  for (const auto& id : lr) CHECK(cr.count(id) == 0);
  CHECK(per_kind[ToolKind::Crop] == 2);
  CHECK(per_kind[ToolKind::Scale] == 1);
  CHECK(per_kind[ToolKind::Display] == 1);

  // The long-reasoning picks are the four longest samples by the oracle metric.
  std::vector<std::pair<std::size_t, std::string>> ranked;
  for (const auto& t : corpus) ranked.emplace_back(length_oracle(t), t.id);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t i = 0; i < 4; ++i) CHECK(lr.count(ranked[i].second) == 1);

  CHECK_THROWS_AS(build_hard_subset(corpus, 7), InputError);
  CHECK_THROWS_AS(build_hard_subset(std::vector<Trajectory>(corpus.begin(), corpus.begin() + 3), 8), Error);
  Json j = subset.fragments.back().to_json();
  CHECK(j["origin"] == "CriticalRegion");
  CHECK(j["gt"]["kind"] == "next_tool");
}

TEST_CASE("short quotas produce warnings") {
  auto corpus = fixtures::hardset_corpus();
  auto subset = critical_region_truncate(corpus, 30);
  CHECK_FALSE(subset.warnings.empty());
  CHECK(subset.fragments.size() < 30);
}
