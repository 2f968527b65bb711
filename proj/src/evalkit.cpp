// SPDX-License-Identifier: Apache-2.0
#include "cruforge/evalkit.hpp"

#include <fmt/format.h>

#include "cruforge/error.hpp"
#include "cruforge/judge.hpp"

namespace cruforge::evalkit {

std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path, const std::string& benchmark) {
  std::vector<BenchmarkItem> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      BenchmarkItem item;
      item.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                                 : std::to_string(line);
      item.benchmark = benchmark;
      item.image_path = j.at("image_path").get<std::string>();
      item.question = j.at("question").get<std::string>();
      item.answer = j.at("answer").get<std::string>();
      item.category = j.value("category", "");
      out.push_back(std::move(item));
    } catch (const Json::exception& e) {
      throw InputError("MalformedInput", fmt::format("{}:{}: {}", path.string(), line, e.what()));
    }
  }
  return out;
}

Json EvalRecord::to_json() const {
  return Json{{"benchmark", benchmark}, {"category", category},     {"id", id},
              {"question", question},   {"gt", gt},                 {"prediction", prediction},
              {"verdict", verdict},     {"trajectory_id", trajectory_id}};
}

EvalRecord EvalRecord::from_json(const Json& j) {
  try {
    EvalRecord r;
    r.benchmark = j.at("benchmark").get<std::string>();
    r.category = j.value("category", "");
    r.id = j.at("id").get<std::string>();
    r.question = j.value("question", "");
    r.gt = j.value("gt", "");
    r.prediction = j.value("prediction", "");
    r.verdict = j.at("verdict").get<int>();
    r.trajectory_id = j.value("trajectory_id", "");
    if (r.verdict != 0 && r.verdict != 1) throw InputError("MalformedInput", "verdict must be 0 or 1");
    return r;
  } catch (const Json::exception& e) {
    throw InputError("MalformedInput", std::string("bad eval record: ") + e.what());
  }
}

std::string eval_key(const std::string& benchmark, const std::string& id) { return benchmark + "/" + id; }

EvalRecord judge_item(ChatBackend& judge, const BenchmarkItem& item, const std::string& prediction,
                      const std::string& trajectory_id) {
  EvalRecord r;
  r.benchmark = item.benchmark;
  r.category = item.category;
  r.id = item.id;
  r.question = item.question;
  r.gt = item.answer;
  r.prediction = prediction;
  r.trajectory_id = trajectory_id;
  r.verdict = judge_answer(judge, item.question, item.answer, prediction, eval_key(item.benchmark, item.id));
  return r;
}

std::optional<double> AccuracyCell::accuracy() const {
  if (count == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(count);
}

std::string format_percent(double fraction) { return fmt::format("{:.1f}", fraction * 100.0); }

namespace {

Json cell_json(const AccuracyCell& c) {
  Json j{{"count", c.count}, {"correct", c.correct}};
  if (auto a = c.accuracy()) {
    j["accuracy"] = *a;
    j["percent"] = format_percent(*a);
  }
  return j;
}

}  // namespace

Json AccuracyTable::to_json() const {
  Json benches = Json::array();
  for (const auto& b : benchmarks) {
    Json cats = Json::array();
    for (const auto& c : categories) {
      if (c.benchmark != b.benchmark) continue;
      Json cj = cell_json(c);
      cj["category"] = c.category;
      cats.push_back(std::move(cj));
    }
    Json bj = cell_json(b);
    bj["benchmark"] = b.benchmark;
    bj["categories"] = std::move(cats);
    benches.push_back(std::move(bj));
  }
  return Json{{"benchmarks", benches}, {"overall", cell_json(overall)}};
}

std::string AccuracyTable::to_text() const {
  auto rate = [](const AccuracyCell& c) { return c.accuracy() ? format_percent(*c.accuracy()) : std::string("-"); };
  std::string out = fmt::format("{:<24} {:<24} {:>8} {:>8}\n", "benchmark", "category", "count", "acc%");
  for (const auto& b : benchmarks) {
    for (const auto& c : categories)
      if (c.benchmark == b.benchmark)
        out += fmt::format("{:<24} {:<24} {:>8} {:>8}\n", c.benchmark, c.category, c.count, rate(c));
    out += fmt::format("{:<24} {:<24} {:>8} {:>8}\n", b.benchmark, "(all)", b.count, rate(b));
  }
  out += fmt::format("{:<24} {:<24} {:>8} {:>8}\n", "(all)", "", overall.count, rate(overall));
  return out;
}

AccuracyTable aggregate(const std::vector<EvalRecord>& records,
                        const std::map<std::string, std::vector<std::string>>& declared) {
  std::map<std::pair<std::string, std::string>, AccuracyCell> cats;
  std::map<std::string, AccuracyCell> benches;
  for (const auto& [bench, list] : declared) {
    benches.try_emplace(bench, AccuracyCell{bench, "", 0, 0});
    for (const auto& c : list) cats.try_emplace({bench, c}, AccuracyCell{bench, c, 0, 0});
  }
  AccuracyTable t;
  for (const auto& r : records) {
    auto& c = cats.try_emplace({r.benchmark, r.category}, AccuracyCell{r.benchmark, r.category, 0, 0}).first->second;
    auto& b = benches.try_emplace(r.benchmark, AccuracyCell{r.benchmark, "", 0, 0}).first->second;
    for (AccuracyCell* cell : {&c, &b, &t.overall}) {
      ++cell->count;
      cell->correct += r.verdict == 1 ? 1 : 0;
    }
  }
  for (auto& [k, c] : cats) t.categories.push_back(c);
  for (auto& [k, b] : benches) t.benchmarks.push_back(b);
  return t;
}

}  // namespace cruforge::evalkit
