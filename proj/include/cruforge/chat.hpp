// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cruforge/image.hpp"
#include "cruforge/prompts.hpp"
#include "cruforge/protocol.hpp"

namespace cruforge {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);

struct TextPart {
  std::string text;
};

struct ImagePart {
  ObservationRef ref;
  std::shared_ptr<const Raster> pixels;  // may be null when only a file path is known
  std::string path;
};

using Part = std::variant<TextPart, ImagePart>;

struct Message {
  Role role = Role::User;
  std::vector<Part> content;

  static Message text(Role role, std::string body);
  std::string joined_text() const;
  std::size_t image_count() const;
};

// Builds a user message from a rendered template; image slots are looked up by placeholder name.
Message user_message(const std::vector<prompts::Segment>& segments, const std::map<std::string, ImagePart>& images);

struct ChatRequest {
  std::vector<Message> messages;
  std::string tag = "policy";  // which prompt family; replay files key on it
  std::string key;             // stable per-call key within the tag
  std::string episode;         // policy calls only
  int turn = 0;
  int sample = 0;
  int attempt = 0;
  std::optional<std::uint64_t> seed;
  int max_tokens = 0;  // 0: backend default
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string generate(const ChatRequest& request) = 0;
};

// Canned outputs from JSONL. Records are either
//   {"tag": ..., "key": ..., "attempt": n?, "output": ...}   or
//   {"episode": ..., "turn": n, "sample": k?, "attempt": n?, "output": ...}   (tag "policy").
// Lookups fall back to attempt 0, for policy records to sample 0, then to key "*" of the tag.
class ReplayBackend : public ChatBackend {
 public:
  ReplayBackend() = default;
  explicit ReplayBackend(const std::filesystem::path& path);
  void add(const std::string& tag, const std::string& key, std::string output, int attempt = 0);
  void add_policy(const std::string& episode, int turn, std::string output, int sample = 0, int attempt = 0);
  void load(const std::filesystem::path& path);
  std::size_t size() const { return outputs_.size(); }
  std::string generate(const ChatRequest& request) override;

  static std::string policy_key(const std::string& episode, int turn, int sample);

 private:
  std::map<std::string, std::string> outputs_;
};

class FunctionBackend : public ChatBackend {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  explicit FunctionBackend(Fn fn) : fn_(std::move(fn)) {}
  std::string generate(const ChatRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// Forces one call at a time through a backend that is not reentrant.
class SerializingBackend : public ChatBackend {
 public:
  explicit SerializingBackend(ChatBackend& inner) : inner_(inner) {}
  std::string generate(const ChatRequest& request) override {
    std::lock_guard lock(mu_);
    return inner_.generate(request);
  }

 private:
  ChatBackend& inner_;
  std::mutex mu_;
};

class CountingBackend : public ChatBackend {
 public:
  explicit CountingBackend(ChatBackend& inner) : inner_(inner) {}
  std::string generate(const ChatRequest& request) override {
    ++calls_;
    return inner_.generate(request);
  }
  std::size_t calls() const { return calls_.load(); }

 private:
  ChatBackend& inner_;
  std::atomic<std::size_t> calls_{0};
};

struct EndpointConfig {
  std::string url;  // e.g. https://host/v1/chat/completions
  std::string model;
  std::string api_key;
  int max_tokens = 512;
  double temperature = 1.0;
  int attempts = 3;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{120};
};

// OpenAI-compatible chat completions over HTTP(S); images are sent as base64 PNG data URLs.
class RemoteBackend : public ChatBackend {
 public:
  explicit RemoteBackend(EndpointConfig config);
  std::string generate(const ChatRequest& request) override;
  const EndpointConfig& config() const { return config_; }

 private:
  EndpointConfig config_;
};

}  // namespace cruforge
