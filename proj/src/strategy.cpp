// SPDX-License-Identifier: Apache-2.0
#include "cruforge/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "cruforge/error.hpp"
#include "cruforge/judge.hpp"
#include "cruforge/prompts.hpp"

namespace cruforge::strategy {

void RewardWeights::validate() const {
  if (w_text < 0 || w_vis < 0) throw std::invalid_argument("reward weights must be nonnegative");
  if (std::abs(w_text + w_vis + kPatternBonus - 1.0) > 1e-9)
    throw std::invalid_argument(fmt::format("w_text + w_vis must be 0.9, got {} + {}", w_text, w_vis));
}

std::string_view to_string(RewardKind k) {
  switch (k) {
    case RewardKind::Answer: return "answer";
    case RewardKind::Cru: return "cru";
    case RewardKind::Format: return "format";
  }
  return {};
}

RewardBreakdown RewardBreakdown::answer(int r) {
  RewardBreakdown b;
  b.kind = RewardKind::Answer;
  b.r_ans = r;
  b.total = r;
  return b;
}

RewardBreakdown RewardBreakdown::penalty(std::string reason) {
  RewardBreakdown b;
  b.kind = RewardKind::Format;
  b.reason = std::move(reason);
  b.total = kFormatPenalty;
  return b;
}

Json RewardBreakdown::to_json() const {
  Json j{{"kind", to_string(kind)}};
  switch (kind) {
    case RewardKind::Answer: j["r_ans"] = r_ans; break;
    case RewardKind::Cru:
      j["s_text"] = s_text;
      j["s_vis"] = s_vis;
      j["w_text"] = w_text;
      j["w_vis"] = w_vis;
      j["pattern_bonus"] = pattern_bonus;
      break;
    case RewardKind::Format: j["reason"] = reason; break;
  }
  j["total"] = total;
  return j;
}

int score_answer(ChatBackend& judge, std::string_view question, std::string_view gt, std::string_view pred,
                 const std::string& key) {
  return judge_answer(judge, question, gt, pred, key);
}

RewardBreakdown score_cru(ChatBackend& text_judge, ChatBackend& vision_judge, const CruContext& ctx,
                          const RewardWeights& weights) {
  weights.validate();
  ChatRequest text_req;
  text_req.tag = "reward_text";
  text_req.key = ctx.key;
  text_req.messages.push_back(Message::text(
      Role::User, prompts::fill(prompts::Template::TextCoherence, {{"question", ctx.question},
                                                                   {"answer", ctx.answer},
                                                                   {"pre_think", ctx.prev_think},
                                                                   {"latest_step", ctx.latest_step}})));
  ChatRequest vis_req;
  vis_req.tag = "reward_vis";
  vis_req.key = ctx.key;
  vis_req.messages.push_back(user_message(
      prompts::render(prompts::Template::VisualRelevance,
                      {{"question", ctx.question}, {"answer", ctx.answer}, {"latest_step", ctx.latest_step}}),
      {{"image", ctx.original}, {"sub_image", ctx.focus}}));

  RewardBreakdown b;
  b.kind = RewardKind::Cru;
  b.s_text = query_with_retries(text_judge, std::move(text_req), parse_score, "text coherence");
  b.s_vis = query_with_retries(vision_judge, std::move(vis_req), parse_score, "visual relevance");
  b.w_text = weights.w_text;
  b.w_vis = weights.w_vis;
  b.pattern_bonus = ctx.gt_tool && *ctx.gt_tool == ctx.invoked ? kPatternBonus : 0.0;
  b.total = b.w_text * b.s_text + b.w_vis * b.s_vis + b.pattern_bonus;
  return b;
}

std::optional<RewardBreakdown> score_format(const ParseResult& parsed) {
  if (const auto* err = parse_error(parsed)) return RewardBreakdown::penalty(std::string(to_string(err->reason)));
  return std::nullopt;
}

RewardBreakdown total_reward(const Rollout& rollout, const HistoryState& state, const RewardContext& ctx,
                             Judges& judges) {
  if (auto penalty = score_format(rollout.parsed)) return *penalty;
  if (rollout.kind == RolloutKind::Invalid) return RewardBreakdown::penalty("ToolError");
  const Turn& turn = *parsed_turn(rollout.parsed);
  if (rollout.kind == RolloutKind::Answer)
    return RewardBreakdown::answer(score_answer(judges.answer, ctx.question, ctx.gt_answer, *turn.answer(), ctx.key));

  std::vector<std::string> prev;
  for (const auto& t : state.prefix.turns) prev.push_back(t.think);
  const ImageRecord& original = state.store.at(0);
  const ImageRecord& focus = rollout.store.at(rollout.observation->index);
  CruContext c;
  c.key = ctx.key;
  c.question = ctx.question;
  c.answer = ctx.gt_answer;
  c.prev_think = join(prev, "\n");
  c.latest_step = turn.think;
  c.original = ImagePart{original.ref(), original.pixels, {}};
  c.focus = ImagePart{focus.ref(), focus.pixels, {}};
  c.invoked = tool_kind(*turn.tool());
  c.gt_tool = ctx.gt_tool;
  return score_cru(judges.text, judges.vision, c, ctx.weights);
}

std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw Error("GroupTooSmall", fmt::format("group of {} rewards", rewards.size()));
  std::vector<double> out(rewards.size(), 0.0);
  // Rounding in the mean can leave a tiny spread on a constant group.
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) return out;
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

double grpo_clip_term(double ratio, double advantage, double eps) {
  if (!(ratio > 0)) throw std::invalid_argument("ratio must be positive");
  double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

std::string flatten_transcript(const std::vector<Message>& messages) {
  std::string out;
  for (const auto& m : messages)
    for (const auto& part : m.content)
      out += std::holds_alternative<TextPart>(part) ? std::get<TextPart>(part).text : std::string(kImagePlaceholder);
  return out;
}

std::vector<MaskSegment> loss_mask(const std::vector<Message>& messages) {
  std::vector<MaskSegment> out;
  std::size_t offset = 0;
  bool seen_query = false;
  for (std::size_t i = 0; i < messages.size(); ++i) {
    const Message& m = messages[i];
    // User messages after the query are tool observations: header and image form one masked unit.
    const bool observation = m.role == Role::User && seen_query;
    if (m.role == Role::User) seen_query = true;
    std::size_t start = offset;
    for (const auto& part : m.content) {
      std::size_t len =
          std::holds_alternative<TextPart>(part) ? std::get<TextPart>(part).text.size() : kImagePlaceholder.size();
      if (!observation) out.push_back(MaskSegment{i, offset, offset + len, m.role, m.role == Role::Assistant, false});
      offset += len;
    }
    if (observation) out.push_back(MaskSegment{i, start, offset, m.role, false, true});
  }
  return out;
}

std::vector<MaskSegment> loss_mask(const Trajectory& trajectory) { return loss_mask(transcript_messages(trajectory)); }

}  // namespace cruforge::strategy
