// SPDX-License-Identifier: Apache-2.0
#include "cruforge/judge.hpp"

#include <regex>

#include "cruforge/prompts.hpp"
#include "cruforge/util.hpp"

namespace cruforge {

std::optional<std::string> extract_boxed(std::string_view text) {
  static constexpr std::string_view kOpen = "\\boxed{";
  auto pos = text.rfind(kOpen);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + kOpen.size();
  int depth = 1;
  for (std::size_t j = i; j < text.size(); ++j) {
    if (text[j] == '{') ++depth;
    if (text[j] == '}' && --depth == 0) return std::string(text.substr(i, j - i));
  }
  return std::nullopt;
}

std::optional<int> parse_verdict(std::string_view reply) {
  auto boxed = extract_boxed(reply);
  if (!boxed) return std::nullopt;
  auto v = trim(*boxed);
  if (v == "0") return 0;
  if (v == "1") return 1;
  return std::nullopt;
}

std::optional<double> parse_score(std::string_view reply) {
  static const std::regex kDecimal(R"(^\d+(\.\d{1,2})?$)");
  auto boxed = extract_boxed(reply);
  if (!boxed) return std::nullopt;
  std::string v(trim(*boxed));
  if (!std::regex_match(v, kDecimal)) return std::nullopt;
  double score = std::stod(v);
  if (score < 0.0 || score > 1.0) return std::nullopt;
  return score;
}

int judge_answer(ChatBackend& judge, std::string_view question, std::string_view gt, std::string_view pred,
                 const std::string& key, const std::string& tag) {
  ChatRequest req;
  req.tag = tag;
  req.key = key;
  req.messages.push_back(Message::text(
      Role::User, prompts::fill(prompts::Template::AnswerVerification, {{"question", std::string(question)},
                                                                         {"answer_gt", std::string(gt)},
                                                                         {"answer_pred", std::string(pred)}})));
  return query_with_retries(judge, std::move(req), parse_verdict, "answer verification");
}

}  // namespace cruforge
