// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <type_traits>

#include <fmt/format.h>

#include "cruforge/chat.hpp"
#include "cruforge/error.hpp"

namespace cruforge {

inline constexpr int kJudgeAttempts = 3;

// Content of the last \boxed{...} in the text, with nested braces balanced.
std::optional<std::string> extract_boxed(std::string_view text);
std::optional<int> parse_verdict(std::string_view reply);   // boxed 0 or 1
std::optional<double> parse_score(std::string_view reply);  // boxed decimal in [0, 1], at most two decimals

// Re-asks on schema violations; the attempt number is part of the request so replays can vary.
template <class Parse>
auto query_with_retries(ChatBackend& client, ChatRequest request, Parse parse, std::string_view what)
    -> std::remove_cvref_t<decltype(*parse(std::string_view{}))> {
  std::string last;
  for (int attempt = 0; attempt < kJudgeAttempts; ++attempt) {
    request.attempt = attempt;
    last = client.generate(request);
    if (auto value = parse(std::string_view(last))) return *value;
  }
  if (last.size() > 200) last = last.substr(0, 200) + "...";
  throw BadJudgeResponse(fmt::format("{} ({}): no valid reply after {} attempts; last: {}", what, request.key,
                                     kJudgeAttempts, last));
}

// Answer verification through the few-shot judge prompt. Never short-circuits on string equality.
int judge_answer(ChatBackend& judge, std::string_view question, std::string_view gt, std::string_view pred,
                 const std::string& key = {}, const std::string& tag = "judge_answer");

}  // namespace cruforge
