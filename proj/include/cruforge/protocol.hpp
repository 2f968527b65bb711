// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace cruforge {

struct BBox {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  long long area() const { return static_cast<long long>(width()) * height(); }
  bool valid() const { return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2; }
  bool fits(int w, int h) const { return valid() && x2 <= w && y2 <= h; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Crop {
  BBox bbox;
  int image_index = 0;
  friend bool operator==(const Crop&, const Crop&) = default;
};

struct Scale {
  double scale_factor = 1.0;
  int image_index = 0;
  friend bool operator==(const Scale&, const Scale&) = default;
};

struct Display {
  int image_index = 0;
  friend bool operator==(const Display&, const Display&) = default;
};

using ToolCall = std::variant<Crop, Scale, Display>;

enum class ToolKind { Crop, Scale, Display };

ToolKind tool_kind(const ToolCall& call);
int image_index_of(const ToolCall& call);
std::string_view wire_name(ToolKind kind);
std::optional<ToolKind> tool_kind_from_wire(std::string_view name);

struct ToolAction {
  ToolCall call;
  friend bool operator==(const ToolAction&, const ToolAction&) = default;
};

struct AnswerAction {
  std::string answer;
  friend bool operator==(const AnswerAction&, const AnswerAction&) = default;
};

using Action = std::variant<ToolAction, AnswerAction>;

struct Turn {
  std::string think;
  Action action;

  const ToolCall* tool() const;
  const std::string* answer() const;
  friend bool operator==(const Turn&, const Turn&) = default;
};

enum class FormatReason {
  MissingThink,
  MultipleActions,
  NoAction,
  MalformedJson,
  UnknownTool,
  BadArguments,
  StrayText,
};

std::string_view to_string(FormatReason reason);
std::optional<FormatReason> format_reason_from_string(std::string_view s);

struct FormatError {
  FormatReason reason;
  std::string detail;
};

using ParseResult = std::variant<Turn, FormatError>;

inline const Turn* parsed_turn(const ParseResult& r) { return std::get_if<Turn>(&r); }
inline const FormatError* parse_error(const ParseResult& r) { return std::get_if<FormatError>(&r); }

std::string render_system_prompt(bool include_emergency);

// One-line JSON for a tool call, byte-compatible with the prompt examples.
std::string serialize_tool_call(const ToolCall& call);
std::string serialize_turn(const Turn& turn);
ParseResult parse_model_output(std::string_view text);
bool has_tag_marker(std::string_view text);

// Decodes and schema-checks the JSON body of a tool_call block.
std::variant<ToolCall, FormatError> decode_tool_call(std::string_view json_text);

struct ObservationRef {
  int index = 0;
  int width = 0;
  int height = 0;

  std::string header() const;  // "Image {index}: {width} x {height}."
  friend bool operator==(const ObservationRef&, const ObservationRef&) = default;
};

enum class PatternLabel { Planning, Reflecting, Verifying, Backtracking };

inline constexpr PatternLabel kAllPatterns[] = {PatternLabel::Planning, PatternLabel::Reflecting,
                                               PatternLabel::Verifying, PatternLabel::Backtracking};

std::string_view to_string(PatternLabel label);
std::optional<PatternLabel> pattern_from_string(std::string_view s);

// A turn may carry several labels at once (e.g. the planning turn that also backtracks).
class PatternSet {
 public:
  PatternSet() = default;
  PatternSet(std::initializer_list<PatternLabel> labels) {
    for (auto l : labels) add(l);
  }
  void add(PatternLabel l) { bits_ |= bit(l); }
  bool has(PatternLabel l) const { return (bits_ & bit(l)) != 0; }
  bool empty() const { return bits_ == 0; }
  PatternSet& operator|=(PatternSet o) {
    bits_ |= o.bits_;
    return *this;
  }
  std::vector<PatternLabel> labels() const;
  friend bool operator==(PatternSet, PatternSet) = default;

 private:
  static std::uint8_t bit(PatternLabel l) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(l)); }
  std::uint8_t bits_ = 0;
};

struct Trajectory {
  std::string id;
  std::string question;
  ObservationRef original;               // image 0
  std::vector<std::string> image_paths;  // [0] is the query image; later entries are cached tool outputs
  std::vector<Turn> turns;
  std::vector<ObservationRef> observations;  // one per executed tool-action turn
  std::optional<std::string> final_answer;
  std::vector<PatternSet> pattern_labels;  // empty, or one entry per turn
  std::vector<std::string> raw_outputs;    // verbatim generator outputs, including the failing one
  std::optional<FormatError> format_error;
  std::optional<std::string> tool_error;  // "Code: message" when a tool call failed
  bool text_only = false;

  std::size_t tool_call_count() const;
};

struct Cru {
  ObservationRef observation;
  std::vector<std::string> steps;
  PatternSet pattern;
};

// Throws Error("InconsistentObservations") when observations do not match the tool calls.
std::vector<Cru> to_crus(const Trajectory& trajectory);

enum class ChainClass { CotDegenerate, VcotDegenerate, General };
std::string_view to_string(ChainClass c);

ChainClass classify_chain(std::span<const Cru> crus);
ChainClass classify_chain(const Trajectory& trajectory);

}  // namespace cruforge
