// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cruforge/chat.hpp"
#include "cruforge/protocol.hpp"
#include "cruforge/rollout.hpp"
#include "cruforge/util.hpp"

namespace cruforge::strategy {

inline constexpr double kPatternBonus = 0.1;
inline constexpr double kFormatPenalty = -1.0;

struct RewardWeights {
  double w_text = 0.4;
  double w_vis = 0.5;

  // The CRU maximum must equal the answer maximum: w_text + w_vis + bonus == 1.
  void validate() const;  // throws std::invalid_argument
};

enum class RewardKind { Answer, Cru, Format };
std::string_view to_string(RewardKind k);

struct RewardBreakdown {
  RewardKind kind = RewardKind::Format;
  int r_ans = 0;
  double s_text = 0;
  double s_vis = 0;
  double w_text = 0;
  double w_vis = 0;
  double pattern_bonus = 0;
  std::string reason;  // format or tool error code for penalties
  double total = 0;

  static RewardBreakdown answer(int r);
  static RewardBreakdown penalty(std::string reason);
  Json to_json() const;
};

int score_answer(ChatBackend& judge, std::string_view question, std::string_view gt, std::string_view pred,
                 const std::string& key = {});

struct CruContext {
  std::string key;
  std::string question;
  std::string answer;       // ground-truth final answer shown to the judges
  std::string prev_think;   // earlier think texts, joined
  std::string latest_step;  // think text of the scored CRU
  ImagePart original;
  ImagePart focus;  // the observation the CRU's tool call returned
  ToolKind invoked = ToolKind::Crop;
  std::optional<ToolKind> gt_tool;  // pattern bonus is scored only when present
};

RewardBreakdown score_cru(ChatBackend& text_judge, ChatBackend& vision_judge, const CruContext& ctx,
                          const RewardWeights& weights = {});

// A penalty breakdown for parse failures, nullopt for valid output.
std::optional<RewardBreakdown> score_format(const ParseResult& parsed);

struct Judges {
  ChatBackend& answer;
  ChatBackend& text;
  ChatBackend& vision;
};

struct RewardContext {
  std::string key;
  std::string question;
  std::string gt_answer;
  std::optional<ToolKind> gt_tool;
  RewardWeights weights;
};

// Scores one rollout of a group sampled from state. Invalid rollouts never reach a judge.
RewardBreakdown total_reward(const Rollout& rollout, const HistoryState& state, const RewardContext& ctx,
                             Judges& judges);

// Population standard deviation; a zero-variance group maps to zeros. Throws Error(GroupTooSmall) for G < 2.
std::vector<double> group_advantages(const std::vector<double>& rewards);

double grpo_clip_term(double ratio, double advantage, double eps = 0.2);

struct MaskSegment {
  std::size_t message = 0;
  std::size_t begin = 0;  // byte offsets into flatten_transcript
  std::size_t end = 0;
  Role role = Role::User;
  bool trainable = false;
  bool observation = false;
};

inline constexpr std::string_view kImagePlaceholder = "<image>";

// Concatenated message parts with images replaced by kImagePlaceholder.
std::string flatten_transcript(const std::vector<Message>& messages);
std::vector<MaskSegment> loss_mask(const std::vector<Message>& messages);
std::vector<MaskSegment> loss_mask(const Trajectory& trajectory);

}  // namespace cruforge::strategy
