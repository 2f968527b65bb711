// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cruforge/curation.hpp"
#include "cruforge/protocol.hpp"
#include "cruforge/toolbox.hpp"

namespace cruforge::fixtures {

// Hand-transcribed multi-turn traces.
struct TraceFixture {
  std::string id;
  std::string question;
  int width = 0;
  int height = 0;
  DisplayMode display = DisplayMode::AppendAlias;
  std::string answer;
  std::optional<std::vector<PatternSet>> labels;
  std::vector<std::string> outputs;
};

TraceFixture load_trace(const std::string& name);
const std::vector<std::string>& trace_names();

// ---- synthetic curation corpus ----

enum class Layout { Nested, Split };

struct CurationProblem {
  std::string id;
  int width = 0;
  int height = 0;
  std::array<int, 5> correct{};  // correct samples out of 5 per grid factor
  Layout layout = Layout::Nested;
  std::string answer;
  std::string drop_code;  // empty when the problem survives every stage
  bool bad_alignment = false;
};

struct CurationFixture {
  std::filesystem::path dir;
  std::filesystem::path manifest;
  std::filesystem::path replay;
  std::filesystem::path config;
  std::vector<CurationProblem> problems;
};

inline constexpr int kSamplesPerScale = 5;

const std::vector<CurationProblem>& curation_problems();
// Path text for sample k at grid position s; correct samples end in the ground truth.
std::string sampled_text(const CurationProblem& p, std::size_t s, int k);
// Writes images, manifest, replay script and config under dir.
CurationFixture write_curation_fixture(const std::filesystem::path& dir);

// A draft with p1, p2 and p0 units over a w x h image; nested boxes give Reflecting opportunities.
curation::ComposeDraft example_draft(int width = 240, int height = 180, double f_minus = 0.25, double f_plus = 4.0);

// ---- hard-subset corpus ----

enum class SmallRegion { Crop, Scale, Display, None };

// 30 answered trajectories with shape-consistent observations.
std::vector<Trajectory> hardset_corpus();
SmallRegion hardset_kind(std::size_t sample);

}  // namespace cruforge::fixtures
