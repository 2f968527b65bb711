// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cruforge/protocol.hpp"
#include "cruforge/util.hpp"

namespace cruforge::strategy {

inline constexpr double kCriticalAreaRatio = 0.2;

enum class FragmentOrigin { LongReasoning, CriticalRegion };
std::string_view to_string(FragmentOrigin o);

struct HardFragment {
  std::string sample_id;
  Trajectory prefix;  // turns before the cut, with their observations; ends at a CRU boundary
  std::size_t cut_turn = 0;
  FragmentOrigin origin = FragmentOrigin::LongReasoning;
  std::string answer;
  std::optional<ToolKind> next_tool;  // ground truth for critical-region fragments
  double area_ratio = 0.0;
  std::size_t length = 0;  // length metric of the prefix

  Json to_json() const;
};

struct HardSubset {
  std::vector<HardFragment> fragments;
  std::vector<std::string> warnings;
};

// Text tokens of the question and serialized turns plus visual tokens of every observation.
std::size_t length_metric(const Trajectory& t, const TextTokenizer& tokens = whitespace_tokens, int patch = 28);

// Drops the final turn of the n longest samples; throws Error(DatasetTooSmall).
std::vector<HardFragment> long_truncate(const std::vector<Trajectory>& dataset, std::size_t n,
                                        const TextTokenizer& tokens = whitespace_tokens);

// Cuts each sample before the latest tool call whose output covers < 20% of image 0, then keeps the
// longest fragments per tool kind.
HardSubset critical_region_truncate(const std::vector<Trajectory>& dataset, std::size_t n,
                                    const TextTokenizer& tokens = whitespace_tokens);

// Per-kind quotas for n fragments: n/3 each, remainder to the largest groups (crop, scale, display on ties).
std::vector<std::size_t> tool_quotas(std::size_t n, const std::vector<std::size_t>& group_sizes);

HardSubset build_hard_subset(const std::vector<Trajectory>& dataset, std::size_t total,
                             const TextTokenizer& tokens = whitespace_tokens);

// Re-executes the prefix calls on a shape-only store; throws ToolError when a call does not replay.
void replay_prefix(const Trajectory& prefix);

}  // namespace cruforge::strategy
