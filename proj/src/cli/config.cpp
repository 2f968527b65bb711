// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "cruforge/cli.hpp"
#include "cruforge/error.hpp"

namespace cruforge::cli {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw InputError("BadConfig", msg); }

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) bad(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) bad(fmt::format("unknown key {}.{}", where, k));
}

Json interpolate_all(const Json& j) {
  if (j.is_string()) return interpolate_env(j.get<std::string>());
  if (j.is_object()) {
    Json out = Json::object();
    for (const auto& [k, v] : j.items()) out[k] = interpolate_all(v);
    return out;
  }
  if (j.is_array()) {
    Json out = Json::array();
    for (const auto& v : j) out.push_back(interpolate_all(v));
    return out;
  }
  return j;
}

Endpoint endpoint_from_json(const Json& j, const std::string& where) {
  check_keys(j, {"url", "model", "key_env", "max_tokens", "temperature"}, where);
  Endpoint e;
  e.url = j.value("url", e.url);
  e.model = j.value("model", e.model);
  e.key_env = j.value("key_env", e.key_env);
  e.max_tokens = j.value("max_tokens", e.max_tokens);
  e.temperature = j.value("temperature", e.temperature);
  return e;
}

Json endpoint_json(const Endpoint& e) {
  return Json{{"url", e.url},
              {"model", e.model},
              {"key_env", e.key_env},
              {"max_tokens", e.max_tokens},
              {"temperature", e.temperature}};
}

}  // namespace

std::string interpolate_env(std::string_view text) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, 2, "${") == 0) {
      auto end = text.find('}', i + 2);
      if (end == std::string_view::npos) bad("unterminated ${ in config value");
      std::string name(text.substr(i + 2, end - i - 2));
      const char* value = std::getenv(name.c_str());
      if (!value) bad("environment variable " + name + " is not set");
      out += value;
      i = end + 1;
    } else {
      out += text[i++];
    }
  }
  return out;
}

void Config::validate() const {
  try {
    weights.validate();
  } catch (const std::invalid_argument& e) {
    bad(e.what());
  }
  if (patch_size < 1) bad("patch_size must be at least 1");
  if (samples_per_scale < 1) bad("samples_per_scale must be at least 1");
  if (max_turns < 1) bad("limits.max_turns must be at least 1");
  if (max_response_tokens < 1) bad("limits.max_response_tokens must be at least 1");
  for (const auto* p : {&workdir, &cache}) {
    if (p->empty()) bad("paths must be nonempty");
    std::error_code ec;
    if (std::filesystem::exists(*p, ec) && !std::filesystem::is_directory(*p, ec))
      bad(p->string() + " exists and is not a directory");
  }
}

Json Config::canonical() const {
  return Json{{"endpoints",
               {{"policy", endpoint_json(policy)},
                {"judge_text", endpoint_json(judge_text)},
                {"judge_vision", endpoint_json(judge_vision)}}},
              {"weights", {{"w_text", weights.w_text}, {"w_vis", weights.w_vis}}},
              {"limits", {{"max_turns", max_turns}, {"max_response_tokens", max_response_tokens}}},
              {"patch_size", patch_size},
              {"samples_per_scale", samples_per_scale},
              {"display", display == DisplayMode::AppendAlias ? "append" : "reuse"},
              {"seed", seed}};
}

Config config_from_json(const Json& raw) {
  try {
    const Json j = interpolate_all(raw);
    check_keys(j, {"endpoints", "weights", "limits", "patch_size", "samples_per_scale", "display", "seed", "paths"},
               "config");
    Config c;
    if (j.contains("endpoints")) {
      const Json& e = j["endpoints"];
      check_keys(e, {"policy", "judge_text", "judge_vision"}, "endpoints");
      if (e.contains("policy")) c.policy = endpoint_from_json(e["policy"], "endpoints.policy");
      if (e.contains("judge_text")) c.judge_text = endpoint_from_json(e["judge_text"], "endpoints.judge_text");
      if (e.contains("judge_vision")) c.judge_vision = endpoint_from_json(e["judge_vision"], "endpoints.judge_vision");
    }
    if (j.contains("weights")) {
      check_keys(j["weights"], {"w_text", "w_vis"}, "weights");
      c.weights.w_text = j["weights"].value("w_text", c.weights.w_text);
      c.weights.w_vis = j["weights"].value("w_vis", c.weights.w_vis);
    }
    if (j.contains("limits")) {
      check_keys(j["limits"], {"max_turns", "max_response_tokens"}, "limits");
      c.max_turns = j["limits"].value("max_turns", c.max_turns);
      c.max_response_tokens = j["limits"].value("max_response_tokens", c.max_response_tokens);
    }
    c.patch_size = j.value("patch_size", c.patch_size);
    c.samples_per_scale = j.value("samples_per_scale", c.samples_per_scale);
    if (j.contains("display")) {
      auto d = j["display"].get<std::string>();
      if (d == "append")
        c.display = DisplayMode::AppendAlias;
      else if (d == "reuse")
        c.display = DisplayMode::ReuseIndex;
      else
        bad("display must be append or reuse");
    }
    c.seed = j.value("seed", c.seed);
    if (j.contains("paths")) {
      check_keys(j["paths"], {"workdir", "cache"}, "paths");
      c.workdir = j["paths"].value("workdir", c.workdir.string());
      c.cache = j["paths"].value("cache", c.cache.string());
    }
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    bad(e.what());
  }
}

Config load_config(const std::optional<std::filesystem::path>& path) {
  std::optional<std::filesystem::path> p = path;
  if (!p) {
    if (const char* env = std::getenv("CRUFORGE_CONFIG"); env && *env) p = env;
  }
  if (!p) return Config{};
  if (!std::filesystem::exists(*p)) throw InputError("BadConfig", "config file not found: " + p->string());
  Json j = Json::parse(read_file(*p), nullptr, false);
  if (j.is_discarded()) bad(p->string() + " is not valid JSON");
  Config c = config_from_json(j);
  auto base = std::filesystem::absolute(*p).parent_path();
  if (c.workdir.is_relative()) c.workdir = base / c.workdir;
  c.validate();
  return c;
}

std::string SeededBackend::generate(const ChatRequest& request) {
  if (request.seed) return inner_.generate(request);
  ChatRequest r = request;
  r.seed = derive_seed(seed_, fmt::format("{}|{}|{}|{}|{}|{}", r.tag, r.key, r.episode, r.turn, r.sample, r.attempt));
  return inner_.generate(r);
}

std::unique_ptr<ChatBackend> make_remote(const Endpoint& e, const std::string& role) {
  if (!e.configured())
    throw InputError("NoBackend", fmt::format("no {} endpoint configured; set endpoints.{} or use --scripted", role,
                                              role));
  EndpointConfig ec;
  ec.url = e.url;
  ec.model = e.model;
  ec.max_tokens = e.max_tokens;
  ec.temperature = e.temperature;
  if (!e.key_env.empty())
    if (const char* key = std::getenv(e.key_env.c_str())) ec.api_key = key;
  return std::make_unique<RemoteBackend>(std::move(ec));
}

}  // namespace cruforge::cli
