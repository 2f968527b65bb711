// SPDX-License-Identifier: Apache-2.0
#include "cruforge/chat.hpp"

#include <fmt/format.h>

#include "cruforge/error.hpp"
#include "cruforge/util.hpp"

namespace cruforge {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return {};
}

Message Message::text(Role role, std::string body) {
  Message m;
  m.role = role;
  m.content.push_back(TextPart{std::move(body)});
  return m;
}

std::string Message::joined_text() const {
  std::string out;
  for (const auto& p : content)
    if (const auto* t = std::get_if<TextPart>(&p)) out += t->text;
  return out;
}

std::size_t Message::image_count() const {
  std::size_t n = 0;
  for (const auto& p : content) n += std::holds_alternative<ImagePart>(p);
  return n;
}

Message user_message(const std::vector<prompts::Segment>& segments, const std::map<std::string, ImagePart>& images) {
  Message m;
  m.role = Role::User;
  for (const auto& seg : segments) {
    if (seg.is_image) {
      auto it = images.find(seg.value);
      if (it == images.end()) throw std::invalid_argument("no image supplied for {" + seg.value + "}");
      m.content.push_back(it->second);
    } else {
      m.content.push_back(TextPart{seg.value});
    }
  }
  return m;
}

namespace {

std::string slot(const std::string& tag, const std::string& key, int attempt) {
  return tag + '\x1f' + key + '\x1f' + std::to_string(attempt);
}

}  // namespace

ReplayBackend::ReplayBackend(const std::filesystem::path& path) { load(path); }

std::string ReplayBackend::policy_key(const std::string& episode, int turn, int sample) {
  return fmt::format("{}#{}#{}", episode, turn, sample);
}

void ReplayBackend::add(const std::string& tag, const std::string& key, std::string output, int attempt) {
  outputs_[slot(tag, key, attempt)] = std::move(output);
}

void ReplayBackend::add_policy(const std::string& episode, int turn, std::string output, int sample, int attempt) {
  add("policy", policy_key(episode, turn, sample), std::move(output), attempt);
}

void ReplayBackend::load(const std::filesystem::path& path) {
  for (const auto& j : read_jsonl(path)) {
    try {
      int attempt = j.value("attempt", 0);
      std::string output = j.at("output").get<std::string>();
      if (j.contains("episode")) {
        add_policy(j["episode"].get<std::string>(), j.at("turn").get<int>(), std::move(output), j.value("sample", 0),
                   attempt);
      } else {
        add(j.at("tag").get<std::string>(), j.at("key").get<std::string>(), std::move(output), attempt);
      }
    } catch (const Json::exception& e) {
      throw InputError("MalformedInput", path.string() + ": bad replay record: " + e.what());
    }
  }
}

std::string ReplayBackend::generate(const ChatRequest& request) {
  std::vector<std::string> keys;
  if (request.tag == "policy") {
    keys.push_back(policy_key(request.episode, request.turn, request.sample));
    keys.push_back(policy_key(request.episode, request.turn, 0));
  } else {
    keys.push_back(request.key);
  }
  keys.push_back("*");
  for (const auto& k : keys) {
    for (int attempt : {request.attempt, 0}) {
      auto it = outputs_.find(slot(request.tag, k, attempt));
      if (it != outputs_.end()) return it->second;
    }
  }
  throw BackendUnavailable(fmt::format("no scripted output for tag '{}' key '{}'", request.tag, keys.front()));
}

}  // namespace cruforge
