// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cruforge/chat.hpp"
#include "cruforge/util.hpp"

namespace cruforge::evalkit {

struct BenchmarkItem {
  std::string id;
  std::string benchmark;
  std::string image_path;
  std::string question;
  std::string answer;
  std::string category;
};

// Generic JSONL rows {id?, image_path, question, answer, category}; ids default to the line number.
std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path, const std::string& benchmark);

struct EvalRecord {
  std::string benchmark;
  std::string category;
  std::string id;
  std::string question;
  std::string gt;
  std::string prediction;
  int verdict = 0;
  std::string trajectory_id;

  Json to_json() const;
  static EvalRecord from_json(const Json& j);
};

std::string eval_key(const std::string& benchmark, const std::string& id);

// Verdicts always come from the judge; an empty prediction is judged like any other.
EvalRecord judge_item(ChatBackend& judge, const BenchmarkItem& item, const std::string& prediction,
                      const std::string& trajectory_id = {});

struct AccuracyCell {
  std::string benchmark;
  std::string category;  // empty for a benchmark's overall row
  std::size_t count = 0;
  std::size_t correct = 0;

  std::optional<double> accuracy() const;  // fraction; nullopt when count is 0
};

struct AccuracyTable {
  std::vector<AccuracyCell> categories;  // sorted by (benchmark, category)
  std::vector<AccuracyCell> benchmarks;  // per-benchmark overall
  AccuracyCell overall;

  Json to_json() const;
  std::string to_text() const;
};

// One decimal, e.g. "70.0".
std::string format_percent(double fraction);

// declared lists categories that must appear even without records.
AccuracyTable aggregate(const std::vector<EvalRecord>& records,
                        const std::map<std::string, std::vector<std::string>>& declared = {});

}  // namespace cruforge::evalkit
