// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cruforge {

using Json = nlohmann::ordered_json;

bool is_space(char c);
std::string_view trim(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Shortest decimal that round-trips, always with a fractional part ("16.0", "0.25").
std::string format_real(double v);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view content);

// A JSON object embedded in free text (model replies). Scans candidate '{' positions from the start or
// from the end and returns the first balanced substring that parses as an object and passes accept.
std::optional<Json> find_json_object(std::string_view text, bool from_end,
                                     const std::function<bool(const Json&)>& accept = {});

std::vector<Json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(const std::vector<Json>& records);

std::string sha256_hex(std::string_view data);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);

// Whitespace token count; the default text-length callback.
std::size_t whitespace_tokens(std::string_view text);
using TextTokenizer = std::function<std::size_t(std::string_view)>;

// Keeps the text up to the end of the n-th whitespace-delimited token.
std::string truncate_tokens(std::string_view text, std::size_t n);

// Seed derivation for per-request determinism: mixes a base seed with a key.
std::uint64_t derive_seed(std::uint64_t base, std::string_view key);

}  // namespace cruforge
