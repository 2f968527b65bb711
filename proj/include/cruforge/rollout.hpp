// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cruforge/chat.hpp"
#include "cruforge/protocol.hpp"
#include "cruforge/toolbox.hpp"
#include "cruforge/util.hpp"

namespace cruforge {

struct EpisodeLimits {
  int max_turns = 16;
  int max_response_tokens = 512;
  bool text_only = false;

  void validate() const;  // throws std::invalid_argument
};

struct EpisodeOptions {
  std::string episode_id = "episode";
  DisplayMode display = DisplayMode::AppendAlias;
  // Cuts a generator output to the response budget before parsing.
  std::function<std::string(std::string_view, std::size_t)> truncate = truncate_tokens;
  std::optional<std::uint64_t> seed;
};

struct Episode {
  Trajectory trajectory;
  ImageStore store;
  std::vector<Message> messages;  // as sent to the generator, plus the final reply
};

Episode run_episode(ChatBackend& backend, const std::string& question, Raster image, const EpisodeLimits& limits,
                    const EpisodeOptions& options = {}, const std::string& image_path = {});
Episode run_episode(ChatBackend& backend, const std::string& question, const std::filesystem::path& image_path,
                    const EpisodeLimits& limits, const EpisodeOptions& options = {});

// Canonical transcript of a trajectory: system prompt, query, serialized turns and observation messages.
// Image parts carry pixels when a store is given, else only the cached paths (if any).
std::vector<Message> transcript_messages(const Trajectory& t, const ImageStore* store = nullptr);
Message query_message(const Trajectory& t, const ImageStore* store);
Json message_to_json(const Message& m);
Json messages_to_json(const std::vector<Message>& ms);
Message observation_message(const ObservationRef& obs, const ImageStore* store, const std::string& path = {});

// The query plus a prefix of completed CRUs. Every prefix turn is a tool turn whose observation is in the store.
struct HistoryState {
  Trajectory prefix;
  ImageStore store;

  static HistoryState start(std::string episode_id, std::string question, Raster image, std::string image_path = {},
                            DisplayMode mode = DisplayMode::AppendAlias);
  // Executes a completed tool turn and appends it to the prefix.
  void advance(const Turn& tool_turn);
  std::vector<Cru> crus() const;
};

enum class RolloutKind { Cru, Answer, Invalid };
std::string_view to_string(RolloutKind k);

struct Rollout {
  int sample = 0;
  RolloutKind kind = RolloutKind::Invalid;
  std::string raw_output;
  ParseResult parsed;
  std::optional<ObservationRef> observation;
  std::optional<std::string> tool_error;
  ImageStore store;  // forked from the state; holds the new observation for CRU rollouts
};

std::vector<Rollout> sample_group(ChatBackend& backend, const HistoryState& state, int group_size,
                                  const EpisodeLimits& limits = {}, const EpisodeOptions& options = {});

}  // namespace cruforge
