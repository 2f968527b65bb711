// SPDX-License-Identifier: Apache-2.0
#include "cruforge/hardset.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include <fmt/format.h>

#include "cruforge/error.hpp"
#include "cruforge/rollout.hpp"
#include "cruforge/toolbox.hpp"
#include "cruforge/trajectory_io.hpp"

namespace cruforge::strategy {

namespace {

constexpr std::array<ToolKind, 3> kKinds{ToolKind::Crop, ToolKind::Scale, ToolKind::Display};

Trajectory prefix_of(const Trajectory& t, std::size_t cut) {
  Trajectory p = t;
  p.turns.assign(t.turns.begin(), t.turns.begin() + static_cast<std::ptrdiff_t>(cut));
  std::size_t calls = 0;
  for (const auto& turn : p.turns) calls += turn.tool() ? 1 : 0;
  p.observations.resize(std::min(calls, t.observations.size()));
  if (p.pattern_labels.size() > cut) p.pattern_labels.resize(cut);
  p.final_answer.reset();
  p.raw_outputs.clear();
  p.format_error.reset();
  p.tool_error.reset();
  return p;
}

bool longer(const HardFragment& a, const HardFragment& b) {
  if (a.length != b.length) return a.length > b.length;
  return a.sample_id < b.sample_id;
}

}  // namespace

std::string_view to_string(FragmentOrigin o) {
  return o == FragmentOrigin::LongReasoning ? "LongReasoning" : "CriticalRegion";
}

Json HardFragment::to_json() const {
  Json gt{{"kind", next_tool ? "next_tool" : "answer"}, {"answer", answer}};
  if (next_tool) gt["tool"] = wire_name(*next_tool);
  Json metrics{{"length", length}, {"cut_turn", cut_turn}};
  if (origin == FragmentOrigin::CriticalRegion) metrics["area_ratio"] = area_ratio;
  return Json{{"id", fmt::format("{}#{}", sample_id, origin == FragmentOrigin::LongReasoning ? "lr" : "cr")},
              {"sample_id", sample_id},
              {"origin", to_string(origin)},
              {"gt", gt},
              {"metrics", metrics},
              {"prefix_messages", messages_to_json(transcript_messages(prefix))},
              {"prefix", trajectory_to_json(prefix)}};
}

std::size_t length_metric(const Trajectory& t, const TextTokenizer& tokens, int patch) {
  std::size_t n = tokens(t.question);
  for (const auto& turn : t.turns) n += tokens(serialize_turn(turn));
  for (const auto& obs : t.observations) n += static_cast<std::size_t>(token_count(obs.width, obs.height, patch));
  return n;
}

std::vector<HardFragment> long_truncate(const std::vector<Trajectory>& dataset, std::size_t n,
                                        const TextTokenizer& tokens) {
  if (dataset.size() < n)
    throw Error("DatasetTooSmall", fmt::format("need {} samples, dataset has {}", n, dataset.size()));
  std::vector<std::pair<std::size_t, const Trajectory*>> ranked;
  for (const auto& t : dataset) {
    if (t.turns.empty() || !t.final_answer)
      throw InputError("MalformedInput", "hard-subset samples must be answered trajectories: " + t.id);
    ranked.emplace_back(length_metric(t, tokens), &t);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second->id < b.second->id;
  });
  std::vector<HardFragment> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = *ranked[i].second;
    HardFragment f;
    f.sample_id = t.id;
    f.cut_turn = t.turns.size() - 1;
    f.prefix = prefix_of(t, f.cut_turn);
    f.origin = FragmentOrigin::LongReasoning;
    f.answer = *t.final_answer;
    f.length = length_metric(f.prefix, tokens);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<std::size_t> tool_quotas(std::size_t n, const std::vector<std::size_t>& group_sizes) {
  std::vector<std::size_t> quotas(kKinds.size(), n / kKinds.size());
  std::vector<std::size_t> order(kKinds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return group_sizes.at(a) > group_sizes.at(b); });
  for (std::size_t r = 0; r < n % kKinds.size(); ++r) ++quotas[order[r]];
  return quotas;
}

HardSubset critical_region_truncate(const std::vector<Trajectory>& dataset, std::size_t n,
                                    const TextTokenizer& tokens) {
  std::vector<std::vector<HardFragment>> groups(kKinds.size());
  for (const auto& t : dataset) {
    if (!t.final_answer) continue;
    const double area0 = static_cast<double>(t.original.width) * t.original.height;
    std::vector<std::size_t> call_turns;
    for (std::size_t j = 0; j < t.turns.size(); ++j)
      if (t.turns[j].tool()) call_turns.push_back(j);
    for (std::size_t k = std::min(call_turns.size(), t.observations.size()); k-- > 0;) {
      const auto& obs = t.observations[k];
      const double ratio = static_cast<double>(obs.width) * obs.height / area0;
      if (!(ratio < kCriticalAreaRatio)) continue;
      HardFragment f;
      f.sample_id = t.id;
      f.cut_turn = call_turns[k];
      f.prefix = prefix_of(t, f.cut_turn);
      f.origin = FragmentOrigin::CriticalRegion;
      f.answer = *t.final_answer;
      f.next_tool = tool_kind(*t.turns[f.cut_turn].tool());
      f.area_ratio = ratio;
      f.length = length_metric(f.prefix, tokens);
      auto g = static_cast<std::size_t>(std::find(kKinds.begin(), kKinds.end(), *f.next_tool) - kKinds.begin());
      groups[g].push_back(std::move(f));
      break;
    }
  }

  std::vector<std::size_t> sizes;
  for (const auto& g : groups) sizes.push_back(g.size());
  auto quotas = tool_quotas(n, sizes);
  HardSubset out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& group = groups[g];
    std::sort(group.begin(), group.end(), longer);
    if (group.size() < quotas[g])
      out.warnings.push_back(fmt::format("{} group has {} fragments, quota {}", wire_name(kKinds[g]), group.size(),
                                         quotas[g]));
    for (std::size_t i = 0; i < std::min(quotas[g], group.size()); ++i) out.fragments.push_back(std::move(group[i]));
  }
  return out;
}

HardSubset build_hard_subset(const std::vector<Trajectory>& dataset, std::size_t total, const TextTokenizer& tokens) {
  if (total % 2 != 0) throw InputError("OddTotal", fmt::format("hard-subset total {} must be even", total));
  HardSubset out;
  if (total == 0) return out;
  out.fragments = long_truncate(dataset, total / 2, tokens);
  std::vector<Trajectory> rest;
  for (const auto& t : dataset) {
    bool taken = std::any_of(out.fragments.begin(), out.fragments.end(),
                             [&](const HardFragment& f) { return f.sample_id == t.id; });
    if (!taken) rest.push_back(t);
  }
  auto cr = critical_region_truncate(rest, total / 2, tokens);
  for (auto& f : cr.fragments) out.fragments.push_back(std::move(f));
  out.warnings = std::move(cr.warnings);
  return out;
}

void replay_prefix(const Trajectory& prefix) {
  ImageStore store = ImageStore::shapes_only(prefix.original.width, prefix.original.height);
  std::size_t k = 0;
  for (const auto& turn : prefix.turns) {
    if (!turn.tool()) continue;
    ObservationRef obs = store.exec(*turn.tool());
    if (k >= prefix.observations.size() || !(prefix.observations[k] == obs))
      throw ToolError("ObservationMismatch", fmt::format("{}: call {} replays to {}", prefix.id, k, obs.header()));
    ++k;
  }
}

}  // namespace cruforge::strategy
