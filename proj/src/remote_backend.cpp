// SPDX-License-Identifier: Apache-2.0
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "cruforge/chat.hpp"
#include "cruforge/error.hpp"
#include "cruforge/util.hpp"

namespace cruforge {
namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InputError("BadConfig", "endpoint url needs a scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

Json image_url(const ImagePart& img) {
  std::vector<std::uint8_t> png;
  if (img.pixels) {
    png = encode_png(*img.pixels);
  } else if (!img.path.empty()) {
    png = encode_png(load_image(img.path));
  } else {
    throw Error("MissingImage", "image part has neither pixels nor a path");
  }
  return Json{{"type", "image_url"}, {"image_url", {{"url", "data:image/png;base64," + base64_encode(png)}}}};
}

Json message_json(const Message& m) {
  Json j;
  j["role"] = std::string(to_string(m.role));
  if (m.image_count() == 0) {
    j["content"] = m.joined_text();
    return j;
  }
  Json parts = Json::array();
  for (const auto& p : m.content) {
    if (const auto* t = std::get_if<TextPart>(&p)) {
      parts.push_back(Json{{"type", "text"}, {"text", t->text}});
    } else {
      parts.push_back(image_url(std::get<ImagePart>(p)));
    }
  }
  j["content"] = std::move(parts);
  return j;
}

}  // namespace

RemoteBackend::RemoteBackend(EndpointConfig config) : config_(std::move(config)) { split_url(config_.url); }

std::string RemoteBackend::generate(const ChatRequest& request) {
  Url url = split_url(config_.url);
  Json body;
  body["model"] = config_.model;
  body["messages"] = Json::array();
  for (const auto& m : request.messages) body["messages"].push_back(message_json(m));
  body["max_tokens"] = request.max_tokens > 0 ? request.max_tokens : config_.max_tokens;
  body["temperature"] = config_.temperature;
  if (request.seed) body["seed"] = *request.seed;
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  std::string last_error;
  auto delay = config_.backoff;
  for (int attempt = 0; attempt < config_.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    httplib::Client client(url.origin);
    client.set_read_timeout(config_.timeout);
    client.set_connection_timeout(std::chrono::seconds(10));
    auto res = client.Post(url.path, headers, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      spdlog::warn("{} attempt {} failed: {}", config_.url, attempt + 1, last_error);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      last_error = "HTTP " + std::to_string(res->status);
      spdlog::warn("{} attempt {} failed: {}", config_.url, attempt + 1, last_error);
      continue;
    }
    auto reply = Json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty()) {
      last_error = "unparseable completion response";
      continue;
    }
    const auto& content = reply["choices"][0]["message"]["content"];
    if (!content.is_string()) {
      last_error = "completion has no text content";
      continue;
    }
    return content.get<std::string>();
  }
  throw BackendUnavailable(config_.url + ": " + last_error);
}

}  // namespace cruforge
