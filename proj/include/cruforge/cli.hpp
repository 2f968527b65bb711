// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cruforge/chat.hpp"
#include "cruforge/strategy.hpp"
#include "cruforge/toolbox.hpp"
#include "cruforge/util.hpp"

namespace cruforge::cli {

struct Endpoint {
  std::string url;
  std::string model;
  std::string key_env = "CRUFORGE_API_KEY";
  int max_tokens = 512;
  double temperature = 1.0;

  bool configured() const { return !url.empty(); }
};

struct Config {
  Endpoint policy;
  Endpoint judge_text;
  Endpoint judge_vision;
  strategy::RewardWeights weights;
  int max_turns = 16;
  int max_response_tokens = 512;
  int patch_size = 28;
  int samples_per_scale = 5;
  DisplayMode display = DisplayMode::AppendAlias;
  std::uint64_t seed = 0;
  std::filesystem::path workdir = "work";
  std::filesystem::path cache = "cache";  // relative paths resolve against the workdir

  // Throws InputError(BadConfig).
  void validate() const;
  // Settings that affect outputs; paths and secrets excluded.
  Json canonical() const;
};

// Replaces ${NAME} with the environment value; unknown names throw InputError(BadConfig).
std::string interpolate_env(std::string_view text);

Config config_from_json(const Json& j);
// Reads path, else $CRUFORGE_CONFIG, else returns defaults.
Config load_config(const std::optional<std::filesystem::path>& path);

// Sets a per-request seed derived from the base seed and the request identity when none is given.
class SeededBackend : public ChatBackend {
 public:
  SeededBackend(ChatBackend& inner, std::uint64_t seed) : inner_(inner), seed_(seed) {}
  std::string generate(const ChatRequest& request) override;

 private:
  ChatBackend& inner_;
  std::uint64_t seed_;
};

// Remote backend for an endpoint; the key comes from the named environment variable.
std::unique_ptr<ChatBackend> make_remote(const Endpoint& e, const std::string& role);

// ---- curation pipeline ----

enum class Stage { Sample, Map, Ground, Compose, All };
std::optional<Stage> stage_from_string(std::string_view s);
std::string_view to_string(Stage s);

struct ManifestEntry {
  std::string id;
  std::string image_path;  // resolved against the manifest directory
  std::string question;
  std::string answer;
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);

struct CurateClients {
  ChatBackend& policy;
  ChatBackend& judge;
  ChatBackend& llm;
  ChatBackend& vlm;
};

struct CurateOptions {
  std::filesystem::path manifest;
  std::filesystem::path workdir;
  Stage stage = Stage::All;
  int jobs = 1;
  Config config;
};

struct CurateSummary {
  std::string run_key;
  std::map<std::string, std::size_t> kept;     // per stage
  std::map<std::string, std::size_t> dropped;  // per reason code
  std::vector<std::filesystem::path> outputs;
};

// First 16 hex digits of sha256(manifest bytes + canonical config).
std::string run_key(const std::string& manifest_bytes, const Config& config);
std::filesystem::path stage_file(const std::filesystem::path& workdir, std::string_view stage, const std::string& key,
                                 std::string_view ext = ".jsonl");

// Throws InputError(MissingStageInput) when a later stage runs before its predecessor.
CurateSummary run_curate(const CurateOptions& options, CurateClients& clients);

// ---- entry point ----

// Parses argv-style arguments and runs a command. Returns the process exit code:
// 0 success, 1 internal error, 2 usage or input error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cruforge::cli
