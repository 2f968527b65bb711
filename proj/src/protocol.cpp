// SPDX-License-Identifier: Apache-2.0
#include "cruforge/protocol.hpp"

#include <climits>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "cruforge/error.hpp"
#include "cruforge/prompts.hpp"
#include "cruforge/util.hpp"

namespace cruforge {

ToolKind tool_kind(const ToolCall& call) {
  switch (call.index()) {
    case 0: return ToolKind::Crop;
    case 1: return ToolKind::Scale;
    default: return ToolKind::Display;
  }
}

int image_index_of(const ToolCall& call) {
  return std::visit([](const auto& c) { return c.image_index; }, call);
}

std::string_view wire_name(ToolKind kind) {
  switch (kind) {
    case ToolKind::Crop: return "crop_image";
    case ToolKind::Scale: return "scale_image";
    case ToolKind::Display: return "display_image";
  }
  return {};
}

std::optional<ToolKind> tool_kind_from_wire(std::string_view name) {
  if (name == "crop_image") return ToolKind::Crop;
  if (name == "scale_image") return ToolKind::Scale;
  if (name == "display_image") return ToolKind::Display;
  return std::nullopt;
}

const ToolCall* Turn::tool() const {
  const auto* t = std::get_if<ToolAction>(&action);
  return t ? &t->call : nullptr;
}

const std::string* Turn::answer() const {
  const auto* a = std::get_if<AnswerAction>(&action);
  return a ? &a->answer : nullptr;
}

std::string_view to_string(FormatReason reason) {
  switch (reason) {
    case FormatReason::MissingThink: return "MissingThink";
    case FormatReason::MultipleActions: return "MultipleActions";
    case FormatReason::NoAction: return "NoAction";
    case FormatReason::MalformedJson: return "MalformedJson";
    case FormatReason::UnknownTool: return "UnknownTool";
    case FormatReason::BadArguments: return "BadArguments";
    case FormatReason::StrayText: return "StrayText";
  }
  return {};
}

std::optional<FormatReason> format_reason_from_string(std::string_view s) {
  for (auto r : {FormatReason::MissingThink, FormatReason::MultipleActions, FormatReason::NoAction,
                 FormatReason::MalformedJson, FormatReason::UnknownTool, FormatReason::BadArguments,
                 FormatReason::StrayText})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

std::string render_system_prompt(bool include_emergency) {
  std::string out(prompts::text(prompts::Template::System));
  if (include_emergency) {
    out += "\n\n";
    out += prompts::text(prompts::Template::Emergency);
  }
  return out;
}

std::string serialize_tool_call(const ToolCall& call) {
  if (const auto* c = std::get_if<Crop>(&call)) {
    return fmt::format(R"({{"name": "crop_image", "arguments": {{"bbox_2d": [{}, {}, {}, {}], "image_index": {}}}}})",
                       c->bbox.x1, c->bbox.y1, c->bbox.x2, c->bbox.y2, c->image_index);
  }
  if (const auto* s = std::get_if<Scale>(&call)) {
    return fmt::format(R"({{"name": "scale_image", "arguments": {{"scale_factor": {}, "image_index": {}}}}})",
                       format_real(s->scale_factor), s->image_index);
  }
  const auto& d = std::get<Display>(call);
  return fmt::format(R"({{"name": "display_image", "arguments": {{"image_index": {}}}}})", d.image_index);
}

std::string serialize_turn(const Turn& turn) {
  std::string out = "<think>\n" + turn.think + "\n</think>\n\n";
  if (const auto* call = turn.tool()) {
    out += "<tool_call>\n" + serialize_tool_call(*call) + "\n</tool_call>";
  } else {
    out += "<answer>\n" + *turn.answer() + "\n</answer>";
  }
  return out;
}

bool has_tag_marker(std::string_view s) {
  static constexpr std::string_view kMarkers[] = {"<think>",      "</think>", "<tool_call>",
                                                  "</tool_call>", "<answer>", "</answer>"};
  for (auto m : kMarkers)
    if (s.find(m) != std::string_view::npos) return true;
  return false;
}

namespace {

enum class BlockType { Think, ToolCall, Answer };

struct Block {
  BlockType type;
  std::string_view content;
  bool closed;
};

struct TagPair {
  BlockType type;
  std::string_view open;
  std::string_view close;
};

constexpr TagPair kPairs[] = {
    {BlockType::Think, "<think>", "</think>"},
    {BlockType::ToolCall, "<tool_call>", "</tool_call>"},
    {BlockType::Answer, "<answer>", "</answer>"},
};

struct Scan {
  std::vector<Block> blocks;
  bool stray = false;
};

std::size_t next_open_tag(std::string_view text, std::size_t from) {
  std::size_t best = std::string_view::npos;
  for (const auto& p : kPairs) best = std::min(best, text.find(p.open, from));
  return best;
}

Scan scan_blocks(std::string_view text) {
  Scan s;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (true) {
    while (i < n && is_space(text[i])) ++i;
    if (i >= n) break;
    const TagPair* pair = nullptr;
    for (const auto& p : kPairs) {
      if (text.substr(i, p.open.size()) == p.open) {
        pair = &p;
        break;
      }
    }
    if (!pair) {
      s.stray = true;
      i = next_open_tag(text, i + 1);
      if (i == std::string_view::npos) break;
      continue;
    }
    std::size_t body = i + pair->open.size();
    std::size_t end = text.find(pair->close, body);
    if (end == std::string_view::npos) {
      s.blocks.push_back({pair->type, text.substr(body), false});
      break;
    }
    s.blocks.push_back({pair->type, text.substr(body, end - body), true});
    i = end + pair->close.size();
  }
  return s;
}

std::string strip_one_newline(std::string_view s) {
  if (!s.empty() && s.front() == '\n') s.remove_prefix(1);
  if (!s.empty() && s.back() == '\n') s.remove_suffix(1);
  return std::string(s);
}

FormatError fail(FormatReason r, std::string detail) { return FormatError{r, std::move(detail)}; }

std::optional<int> as_index(const nlohmann::json& j) {
  if (!j.is_number_integer()) return std::nullopt;
  if (j.is_number_unsigned()) {
    auto v = j.get<std::uint64_t>();
    if (v > static_cast<std::uint64_t>(INT_MAX)) return std::nullopt;
    return static_cast<int>(v);
  }
  auto v = j.get<std::int64_t>();
  if (v < 0 || v > INT_MAX) return std::nullopt;
  return static_cast<int>(v);
}

bool has_exact_keys(const nlohmann::json& obj, std::initializer_list<std::string_view> keys) {
  if (obj.size() != keys.size()) return false;
  for (auto k : keys)
    if (!obj.contains(k)) return false;
  return true;
}

}  // namespace

std::variant<ToolCall, FormatError> decode_tool_call(std::string_view json_text) {
  auto j = nlohmann::json::parse(trim(json_text), nullptr, false);
  if (j.is_discarded()) return fail(FormatReason::MalformedJson, "tool_call body is not valid JSON");
  if (!j.is_object()) return fail(FormatReason::MalformedJson, "tool_call body is not a JSON object");
  if (!j.contains("name") || !j["name"].is_string())
    return fail(FormatReason::MalformedJson, "tool_call object has no string \"name\"");
  auto kind = tool_kind_from_wire(j["name"].get<std::string>());
  if (!kind) return fail(FormatReason::UnknownTool, "unknown tool " + j["name"].get<std::string>());
  if (!has_exact_keys(j, {"name", "arguments"}) || !j["arguments"].is_object())
    return fail(FormatReason::BadArguments, "tool_call needs exactly \"name\" and an \"arguments\" object");
  const auto& args = j["arguments"];

  switch (*kind) {
    case ToolKind::Crop: {
      if (!has_exact_keys(args, {"bbox_2d", "image_index"}))
        return fail(FormatReason::BadArguments, "crop_image takes bbox_2d and image_index");
      const auto& b = args["bbox_2d"];
      if (!b.is_array() || b.size() != 4) return fail(FormatReason::BadArguments, "bbox_2d must have 4 entries");
      int v[4];
      for (int k = 0; k < 4; ++k) {
        auto x = as_index(b[static_cast<std::size_t>(k)]);
        if (!x) return fail(FormatReason::BadArguments, "bbox_2d entries must be nonnegative integers");
        v[k] = *x;
      }
      BBox box{v[0], v[1], v[2], v[3]};
      if (!box.valid()) return fail(FormatReason::BadArguments, "bbox_2d must satisfy x1 < x2 and y1 < y2");
      auto idx = as_index(args["image_index"]);
      if (!idx) return fail(FormatReason::BadArguments, "image_index must be a nonnegative integer");
      return ToolCall{Crop{box, *idx}};
    }
    case ToolKind::Scale: {
      if (!has_exact_keys(args, {"scale_factor", "image_index"}))
        return fail(FormatReason::BadArguments, "scale_image takes scale_factor and image_index");
      const auto& f = args["scale_factor"];
      if (!f.is_number()) return fail(FormatReason::BadArguments, "scale_factor must be a number");
      double factor = f.get<double>();
      if (!std::isfinite(factor) || factor <= 0.0)
        return fail(FormatReason::BadArguments, "scale_factor must be positive");
      auto idx = as_index(args["image_index"]);
      if (!idx) return fail(FormatReason::BadArguments, "image_index must be a nonnegative integer");
      return ToolCall{Scale{factor, *idx}};
    }
    case ToolKind::Display: {
      if (!has_exact_keys(args, {"image_index"}))
        return fail(FormatReason::BadArguments, "display_image takes image_index only");
      auto idx = as_index(args["image_index"]);
      if (!idx) return fail(FormatReason::BadArguments, "image_index must be a nonnegative integer");
      return ToolCall{Display{*idx}};
    }
  }
  return fail(FormatReason::UnknownTool, "unreachable");
}

ParseResult parse_model_output(std::string_view text) {
  Scan s = scan_blocks(text);

  std::size_t thinks = 0;
  for (const auto& b : s.blocks) thinks += b.type == BlockType::Think;
  if (thinks == 0) return fail(FormatReason::MissingThink, "no <think> block");
  if (s.blocks.front().type != BlockType::Think)
    return fail(FormatReason::MissingThink, "action block precedes the <think> block");
  const Block& think = s.blocks.front();
  if (!think.closed) return fail(FormatReason::MissingThink, "unterminated <think> block");
  if (has_tag_marker(think.content)) return fail(FormatReason::StrayText, "tag marker inside <think>");
  if (thinks > 1) return fail(FormatReason::StrayText, "more than one <think> block");
  if (s.stray) return fail(FormatReason::StrayText, "non-whitespace text outside blocks");

  std::size_t actions = s.blocks.size() - 1;
  if (actions == 0) return fail(FormatReason::NoAction, "no <tool_call> or <answer> block");
  if (actions > 1) return fail(FormatReason::MultipleActions, fmt::format("{} action blocks", actions));

  const Block& act = s.blocks[1];
  Turn turn;
  turn.think = strip_one_newline(think.content);
  if (act.type == BlockType::Answer) {
    if (!act.closed) return fail(FormatReason::NoAction, "unterminated <answer> block");
    if (has_tag_marker(act.content)) return fail(FormatReason::StrayText, "tag marker inside <answer>");
    turn.action = AnswerAction{strip_one_newline(act.content)};
    return turn;
  }
  if (!act.closed) return fail(FormatReason::MalformedJson, "unterminated <tool_call> block");
  auto decoded = decode_tool_call(act.content);
  if (auto* err = std::get_if<FormatError>(&decoded)) return *err;
  turn.action = ToolAction{std::get<ToolCall>(decoded)};
  return turn;
}

std::string ObservationRef::header() const { return fmt::format("Image {}: {} x {}.", index, width, height); }

std::string_view to_string(PatternLabel label) {
  switch (label) {
    case PatternLabel::Planning: return "Planning";
    case PatternLabel::Reflecting: return "Reflecting";
    case PatternLabel::Verifying: return "Verifying";
    case PatternLabel::Backtracking: return "Backtracking";
  }
  return {};
}

std::optional<PatternLabel> pattern_from_string(std::string_view s) {
  for (auto l : kAllPatterns)
    if (to_string(l) == s) return l;
  return std::nullopt;
}

std::vector<PatternLabel> PatternSet::labels() const {
  std::vector<PatternLabel> out;
  for (auto l : kAllPatterns)
    if (has(l)) out.push_back(l);
  return out;
}

std::size_t Trajectory::tool_call_count() const {
  std::size_t n = 0;
  for (const auto& t : turns) n += t.tool() != nullptr;
  return n;
}

std::vector<Cru> to_crus(const Trajectory& trajectory) {
  if (trajectory.turns.empty()) throw Error("EmptyTrajectory", "trajectory has no turns");
  // A failed tool call has no observation; every other tool turn must have exactly one.
  std::size_t expected = trajectory.tool_call_count() - (trajectory.tool_error ? 1 : 0);
  if (trajectory.observations.size() != expected)
    throw Error("InconsistentObservations",
                fmt::format("{} observations for {} executed tool calls", trajectory.observations.size(), expected));

  std::vector<Cru> out;
  Cru current{trajectory.original, {}, {}};
  std::size_t k = 0;
  for (std::size_t i = 0; i < trajectory.turns.size(); ++i) {
    const Turn& turn = trajectory.turns[i];
    current.steps.push_back(turn.think);
    if (i < trajectory.pattern_labels.size()) current.pattern |= trajectory.pattern_labels[i];
    if (turn.tool() && k < trajectory.observations.size()) {
      out.push_back(std::move(current));
      current = Cru{trajectory.observations[k++], {}, {}};
    }
  }
  if (!current.steps.empty()) out.push_back(std::move(current));
  return out;
}

std::string_view to_string(ChainClass c) {
  switch (c) {
    case ChainClass::CotDegenerate: return "CotDegenerate";
    case ChainClass::VcotDegenerate: return "VcotDegenerate";
    case ChainClass::General: return "General";
  }
  return {};
}

ChainClass classify_chain(std::span<const Cru> crus) {
  if (crus.empty()) throw Error("EmptyTrajectory", "no CRUs to classify");
  std::size_t n = crus.size(), k = 0;
  bool singletons = true;
  for (const auto& c : crus) {
    k += c.steps.size();
    singletons = singletons && c.steps.size() == 1;
  }
  if (n == 1) return ChainClass::CotDegenerate;
  if (singletons && n == k) return ChainClass::VcotDegenerate;
  return ChainClass::General;
}

ChainClass classify_chain(const Trajectory& trajectory) {
  auto crus = to_crus(trajectory);
  return classify_chain(std::span<const Cru>(crus));
}

}  // namespace cruforge
