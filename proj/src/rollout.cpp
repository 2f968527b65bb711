// SPDX-License-Identifier: Apache-2.0
#include "cruforge/rollout.hpp"

#include <stdexcept>

#include <fmt/format.h>

#include "cruforge/error.hpp"

namespace cruforge {

void EpisodeLimits::validate() const {
  if (max_turns <= 0) throw std::invalid_argument("max_turns must be positive");
  if (max_response_tokens <= 0) throw std::invalid_argument("max_response_tokens must be positive");
}

namespace {

ImagePart image_part(const ObservationRef& ref, const ImageStore* store, const std::string& path) {
  ImagePart part{ref, nullptr, path};
  if (store && store->has_pixels() && static_cast<std::size_t>(ref.index) < store->size())
    part.pixels = store->at(ref.index).pixels;
  return part;
}

std::string path_for(const Trajectory& t, int index) {
  if (index >= 0 && static_cast<std::size_t>(index) < t.image_paths.size()) return t.image_paths[index];
  return {};
}

}  // namespace

Message query_message(const Trajectory& t, const ImageStore* store) {
  Message m;
  m.role = Role::User;
  m.content.push_back(image_part(t.original, store, path_for(t, 0)));
  m.content.push_back(TextPart{t.original.header() + "\n" + t.question});
  return m;
}

Message observation_message(const ObservationRef& obs, const ImageStore* store, const std::string& path) {
  Message m;
  m.role = Role::User;
  m.content.push_back(TextPart{obs.header()});
  m.content.push_back(image_part(obs, store, path));
  return m;
}

Json message_to_json(const Message& m) {
  Json content = Json::array();
  for (const auto& part : m.content) {
    if (const auto* t = std::get_if<TextPart>(&part)) {
      content.push_back({{"type", "text"}, {"text", t->text}});
    } else {
      const auto& img = std::get<ImagePart>(part);
      content.push_back({{"type", "image"},
                         {"index", img.ref.index},
                         {"width", img.ref.width},
                         {"height", img.ref.height},
                         {"path", img.path}});
    }
  }
  return Json{{"role", to_string(m.role)}, {"content", content}};
}

Json messages_to_json(const std::vector<Message>& ms) {
  Json out = Json::array();
  for (const auto& m : ms) out.push_back(message_to_json(m));
  return out;
}

std::vector<Message> transcript_messages(const Trajectory& t, const ImageStore* store) {
  std::vector<Message> out;
  out.push_back(Message::text(Role::System, render_system_prompt(t.text_only)));
  out.push_back(query_message(t, store));
  std::size_t k = 0;
  for (const auto& turn : t.turns) {
    out.push_back(Message::text(Role::Assistant, serialize_turn(turn)));
    if (turn.tool() && !t.text_only && k < t.observations.size()) {
      const auto& obs = t.observations[k++];
      out.push_back(observation_message(obs, store, path_for(t, obs.index)));
    }
  }
  return out;
}

Episode run_episode(ChatBackend& backend, const std::string& question, Raster image, const EpisodeLimits& limits,
                    const EpisodeOptions& options, const std::string& image_path) {
  limits.validate();
  Episode ep{Trajectory{}, ImageStore(std::move(image), options.display), {}};
  Trajectory& t = ep.trajectory;
  t.id = options.episode_id;
  t.question = question;
  t.original = ep.store.at(0).ref();
  t.text_only = limits.text_only;
  t.image_paths.push_back(image_path);

  ep.messages.push_back(Message::text(Role::System, render_system_prompt(limits.text_only)));
  ep.messages.push_back(query_message(t, &ep.store));

  for (int turn_no = 0; turn_no < limits.max_turns; ++turn_no) {
    ChatRequest req;
    req.messages = ep.messages;
    req.tag = "policy";
    req.episode = options.episode_id;
    req.turn = turn_no;
    req.max_tokens = limits.max_response_tokens;
    if (options.seed) req.seed = derive_seed(*options.seed, ReplayBackend::policy_key(options.episode_id, turn_no, 0));
    std::string raw = backend.generate(req);
    t.raw_outputs.push_back(raw);
    std::string text = options.truncate(raw, static_cast<std::size_t>(limits.max_response_tokens));
    ep.messages.push_back(Message::text(Role::Assistant, text));

    ParseResult parsed = parse_model_output(text);
    if (const auto* err = parse_error(parsed)) {
      t.format_error = *err;
      break;
    }
    Turn turn = std::get<Turn>(std::move(parsed));
    t.turns.push_back(turn);
    if (const auto* answer = turn.answer()) {
      t.final_answer = *answer;
      break;
    }
    if (limits.text_only) continue;
    try {
      ObservationRef obs = ep.store.exec(*turn.tool());
      t.observations.push_back(obs);
      ep.messages.push_back(observation_message(obs, &ep.store));
    } catch (const ToolError& e) {
      t.tool_error = e.code() + ": " + e.what();
      break;
    }
  }
  return ep;
}

Episode run_episode(ChatBackend& backend, const std::string& question, const std::filesystem::path& image_path,
                    const EpisodeLimits& limits, const EpisodeOptions& options) {
  return run_episode(backend, question, load_image(image_path), limits, options, image_path.string());
}

HistoryState HistoryState::start(std::string episode_id, std::string question, Raster image, std::string image_path,
                                 DisplayMode mode) {
  HistoryState s{Trajectory{}, ImageStore(std::move(image), mode)};
  s.prefix.id = std::move(episode_id);
  s.prefix.question = std::move(question);
  s.prefix.original = s.store.at(0).ref();
  s.prefix.image_paths.push_back(std::move(image_path));
  return s;
}

void HistoryState::advance(const Turn& tool_turn) {
  if (!tool_turn.tool()) throw std::invalid_argument("history prefixes hold completed CRUs (tool turns) only");
  ObservationRef obs = store.exec(*tool_turn.tool());
  prefix.turns.push_back(tool_turn);
  prefix.observations.push_back(obs);
}

std::vector<Cru> HistoryState::crus() const {
  if (prefix.turns.empty()) return {};
  auto out = to_crus(prefix);
  return out;
}

std::string_view to_string(RolloutKind k) {
  switch (k) {
    case RolloutKind::Cru: return "cru";
    case RolloutKind::Answer: return "answer";
    case RolloutKind::Invalid: return "invalid";
  }
  return {};
}

std::vector<Rollout> sample_group(ChatBackend& backend, const HistoryState& state, int group_size,
                                  const EpisodeLimits& limits, const EpisodeOptions& options) {
  if (group_size < 2) throw Error("PreconditionViolation", fmt::format("group size {} < 2", group_size));
  limits.validate();
  const auto messages = transcript_messages(state.prefix, &state.store);
  const int turn_no = static_cast<int>(state.prefix.turns.size());

  std::vector<Rollout> out;
  out.reserve(static_cast<std::size_t>(group_size));
  for (int k = 0; k < group_size; ++k) {
    ChatRequest req;
    req.messages = messages;
    req.tag = "policy";
    req.episode = state.prefix.id;
    req.turn = turn_no;
    req.sample = k;
    req.max_tokens = limits.max_response_tokens;
    if (options.seed) req.seed = derive_seed(*options.seed, ReplayBackend::policy_key(req.episode, turn_no, k));
    std::string raw = backend.generate(req);
    std::string text = options.truncate(raw, static_cast<std::size_t>(limits.max_response_tokens));

    Rollout r{k, RolloutKind::Invalid, raw, parse_model_output(text), std::nullopt, std::nullopt, state.store.fork()};
    if (const Turn* turn = parsed_turn(r.parsed)) {
      if (turn->answer()) {
        r.kind = RolloutKind::Answer;
      } else {
        try {
          r.observation = r.store.exec(*turn->tool());
          r.kind = RolloutKind::Cru;
        } catch (const ToolError& e) {
          r.tool_error = e.code() + ": " + e.what();
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace cruforge
