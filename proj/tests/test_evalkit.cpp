// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "cruforge/error.hpp"
#include "cruforge/evalkit.hpp"
#include "testkit.hpp"

using namespace cruforge;
using namespace cruforge::evalkit;

namespace {

EvalRecord rec(std::string bench, std::string cat, std::string id, int verdict) {
  EvalRecord r;
  r.benchmark = std::move(bench);
  r.category = std::move(cat);
  r.id = std::move(id);
  r.verdict = verdict;
  return r;
}

const AccuracyCell& cell(const AccuracyTable& t, const std::string& bench, const std::string& cat) {
  auto it = std::find_if(t.categories.begin(), t.categories.end(),
                         [&](const auto& c) { return c.benchmark == bench && c.category == cat; });
  REQUIRE(it != t.categories.end());
  return *it;
}

}  // namespace

TEST_CASE("percent formatting") {
  CHECK(format_percent(0.7) == "70.0");
  CHECK(format_percent(0.5) == "50.0");
  CHECK(format_percent(1.0 / 3.0) == "33.3");
  CHECK(format_percent(2.0 / 3.0) == "66.7");
  CHECK(format_percent(0.0) == "0.0");
}

TEST_CASE("seven of ten is 70.0") {
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(rec("b", "c", std::to_string(i), i < 7 ? 1 : 0));
  auto t = aggregate(rs);
  CHECK(t.overall.count == 10);
  CHECK(format_percent(*t.overall.accuracy()) == "70.0");
  CHECK(t.to_json()["overall"]["percent"] == "70.0");
}

TEST_CASE("overall accuracy pools items, not categories") {
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 5; ++i) rs.push_back(rec("b", "easy", "e" + std::to_string(i), 1));
  for (int i = 0; i < 5; ++i) rs.push_back(rec("b", "hard", "h" + std::to_string(i), 0));
  auto t = aggregate(rs);
  CHECK(format_percent(*cell(t, "b", "easy").accuracy()) == "100.0");
  CHECK(format_percent(*cell(t, "b", "hard").accuracy()) == "0.0");
  CHECK(format_percent(*t.overall.accuracy()) == "50.0");
  // Unequal sizes separate the pooled rate from the mean of category rates.
  rs.push_back(rec("b", "easy", "e5", 1));
  rs.push_back(rec("b", "easy", "e6", 1));
  t = aggregate(rs);
  CHECK(*t.overall.accuracy() == doctest::Approx(7.0 / 12.0));
}

TEST_CASE("declared categories without records have no rate") {
  auto t = aggregate({rec("b", "x", "1", 1)}, {{"b", {"x", "empty"}}, {"other", {}}});
  const auto& empty = cell(t, "b", "empty");
  CHECK(empty.count == 0);
  CHECK_FALSE(empty.accuracy());
  REQUIRE(t.benchmarks.size() == 2);
  CHECK(t.benchmarks[1].benchmark == "other");
  CHECK_FALSE(t.benchmarks[1].accuracy());
  Json j = t.to_json();
  CHECK_FALSE(j["benchmarks"][0]["categories"][0].contains("accuracy"));
  CHECK(j["benchmarks"][0]["categories"][0]["category"] == "empty");
  const std::string text = t.to_text();
  CHECK(text.find("empty") != std::string::npos);
  CHECK(text.find("(all)") != std::string::npos);
  CHECK(aggregate({}).overall.accuracy() == std::nullopt);
}

TEST_CASE("property: aggregation ignores record order and counts add up") {
  testkit::Rng rng(41);
  const std::vector<std::string> benches{"alpha", "beta", "gamma"}, cats{"", "c1", "c2", "c3"};
  for (int i = 0; i < 300; ++i) {
    std::vector<EvalRecord> rs;
    const int n = rng.uniform(1, 60);
    std::size_t correct = 0;
    for (int k = 0; k < n; ++k) {
      rs.push_back(rec(rng.pick(benches), rng.pick(cats), std::to_string(k), rng.coin() ? 1 : 0));
      correct += static_cast<std::size_t>(rs.back().verdict);
    }
    auto t = aggregate(rs);
    auto shuffled = rs;
    std::shuffle(shuffled.begin(), shuffled.end(), rng.engine());
    CHECK(aggregate(shuffled).to_json() == t.to_json());
    CHECK(aggregate(shuffled).to_text() == t.to_text());
    CHECK(t.overall.count == static_cast<std::size_t>(n));
    CHECK(t.overall.correct == correct);
    std::size_t cat_total = 0, bench_total = 0;
    for (const auto& c : t.categories) cat_total += c.count;
    for (const auto& b : t.benchmarks) {
      bench_total += b.count;
      std::size_t within = 0, within_correct = 0;
      for (const auto& c : t.categories)
        if (c.benchmark == b.benchmark) {
          within += c.count;
          within_correct += c.correct;
        }
      CHECK(within == b.count);
      CHECK(within_correct == b.correct);
    }
    CHECK(cat_total == t.overall.count);
    CHECK(bench_total == t.overall.count);
    CHECK(std::is_sorted(t.categories.begin(), t.categories.end(), [](const auto& a, const auto& b) {
      return std::tie(a.benchmark, a.category) < std::tie(b.benchmark, b.category);
    }));
  }
}

TEST_CASE("judge_item always asks the judge") {
  std::vector<std::string> keys;
  FunctionBackend judge([&](const ChatRequest& r) {
    keys.push_back(r.key);
    CHECK(r.tag == "judge_answer");
    return std::string("\\boxed{0}");
  });
  BenchmarkItem item{"7", "bench", "img.png", "q?", "A", "cat"};
  auto r = judge_item(judge, item, "A", "traj");
  CHECK(r.verdict == 0);
  CHECK(keys == std::vector<std::string>{"bench/7"});
  auto empty = judge_item(judge, item, "");
  CHECK(keys.size() == 2);
  CHECK(empty.prediction.empty());
  CHECK(eval_key("b", "x") == "b/x");
}

TEST_CASE("records and benchmarks round trip through JSON") {
  EvalRecord r = rec("b", "c", "1", 1);
  r.prediction = "A";
  r.gt = "A";
  r.trajectory_id = "t";
  CHECK(EvalRecord::from_json(r.to_json()).to_json() == r.to_json());
  Json bad = r.to_json();
  bad["verdict"] = 2;
  CHECK_THROWS_AS(EvalRecord::from_json(bad), InputError);

  testkit::TempDir dir;
  {
    std::ofstream f(dir / "b.jsonl");
    f << R"({"id": "x", "image_path": "a.png", "question": "q", "answer": "A", "category": "geo"})" << "\n";
    f << R"({"image_path": "b.png", "question": "q2", "answer": "B"})" << "\n";
  }
  auto items = load_benchmark(dir / "b.jsonl", "bench");
  REQUIRE(items.size() == 2);
  CHECK(items[0].id == "x");
  CHECK(items[1].id == "2");
  CHECK(items[1].category.empty());
  std::ofstream(dir / "bad.jsonl") << R"({"question": "q"})" << "\n";
  CHECK_THROWS_AS(load_benchmark(dir / "bad.jsonl", "bench"), InputError);
}
