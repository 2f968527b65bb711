// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cruforge/chat.hpp"
#include "cruforge/error.hpp"
#include "cruforge/protocol.hpp"
#include "cruforge/toolbox.hpp"
#include "cruforge/util.hpp"

namespace cruforge::curation {

inline constexpr std::array<double, 5> kScaleFactors{0.25, 0.5, 1.0, 2.0, 4.0};
inline constexpr int kMinTokens = 4;
inline constexpr int kMaxTokens = 16384;
inline constexpr double kMinAccuracyGap = 0.6;

// ---- sampling ----

struct ScaleVariant {
  double nominal = 1.0;  // grid value
  double factor = 1.0;   // after token-clamp repair
  int width = 0;
  int height = 0;
  int tokens = 0;
  bool adjusted = false;
  std::shared_ptr<const Raster> pixels;  // null for shape-only variants

  long long pixel_count() const { return static_cast<long long>(width) * height; }
};

std::vector<ScaleVariant> make_scale_variants(const Raster& image, int patch = 28);
std::vector<ScaleVariant> make_scale_variant_shapes(int width, int height, int patch = 28);
// Factor in the token-clamp range closest to f on the side that restores the bound.
double repair_factor(int width, int height, double f, int patch = 28);

struct SampledPath {
  int sample = 0;
  double nominal = 1.0;
  std::string text;
  std::string predicted;  // what the judge was shown
  bool correct = false;

  std::size_t length() const { return text.size(); }
};

struct ScaleAccuracy {
  double nominal = 1.0;
  int correct = 0;
  int total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct SamplingResult {
  std::vector<ScaleAccuracy> accuracy;  // grid order
  std::vector<SampledPath> paths;       // grid order, then sample index
};

// The answer shown to the judge: the last boxed expression, else the last nonempty line.
std::string final_answer_of(std::string_view path_text);

std::string sample_key(const std::string& id, double nominal, int k);

SamplingResult sample_paths(ChatBackend& policy, ChatBackend& judge, const std::string& id,
                            const std::string& question, const std::string& ground_truth,
                            const std::vector<ScaleVariant>& variants, int k = 5);

struct ScalePair {
  double f_minus = 0;  // nominal grid values
  double f_plus = 0;
  double gap = 0;
  double pixel_ratio = 0;
};

// nullopt when no pair reaches the accuracy gap (NoPair).
std::optional<ScalePair> select_scale_pair(const std::vector<ScaleAccuracy>& accuracy,
                                           const std::vector<ScaleVariant>& variants);

enum class PathSource { P0, P1, P2 };
std::string_view to_string(PathSource s);
std::optional<PathSource> path_source_from_string(std::string_view s);

class MissingPathClass : public Error {
 public:
  explicit MissingPathClass(PathSource which);
  PathSource which() const { return which_; }

 private:
  PathSource which_;
};

struct BasePaths {
  SampledPath p0;
  SampledPath p1;
  SampledPath p2;
};

BasePaths pick_base_paths(const std::vector<SampledPath>& paths, const ScalePair& pair);

// ---- mapping ----

struct AnnotatedStep {
  std::string think;
  std::string object;
};

struct ProtoCru {
  std::string object;
  std::vector<int> step_ids;  // 1-based ids into the step list
  std::vector<std::string> steps;
};

std::optional<std::vector<AnnotatedStep>> parse_decomposition(std::string_view reply);
std::vector<AnnotatedStep> decompose_steps(ChatBackend& llm, const std::string& key, const std::string& question,
                                           const std::string& path_text);

std::vector<ProtoCru> group_into_crus(const std::vector<AnnotatedStep>& steps);

struct StepAlignment {
  std::map<int, int> mapping;  // wrong step id -> correct step id
  int wrong_step = 0;
};

// nullopt on schema violations; throws Error(InvalidMapping) when ids do not exist.
std::optional<StepAlignment> parse_alignment(std::string_view reply, int wrong_count, int correct_count);

struct KeptCru {
  int p0_cru = 0;  // index of the p0 proto-CRU the steps map to
  std::string object;
  std::vector<int> step_ids;
  std::vector<std::string> steps;
};

struct AlignedPath {
  StepAlignment alignment;
  std::vector<KeptCru> kept;  // the last one holds wrong_step
};

AlignedPath align_and_truncate(ChatBackend& llm, const std::string& key, const std::vector<AnnotatedStep>& correct,
                               const std::vector<ProtoCru>& correct_crus, const std::vector<AnnotatedStep>& wrong);

// ---- grounding ----

struct Localization {
  std::optional<BBox> structure;
  std::vector<std::pair<std::string, BBox>> texts;
};

std::optional<Localization> parse_localization(std::string_view reply);
// Union of the structure box and text boxes, clipped to the frame. Throws Error(EmptyGrounding).
BBox fuse_grounding(const Localization& loc, int width, int height);
BBox ground_cru(ChatBackend& vlm, const std::string& key, const ImagePart& image, const std::string& focus_object);

struct Planning {
  std::string caption;
  std::string rationale;
};

std::optional<Planning> parse_planning(std::string_view reply);
Planning gen_planning(ChatBackend& vlm, const std::string& key, const ImagePart& image_at_f_plus,
                      const std::string& question, const std::string& solution);

// steps are the unit texts in composed order; i is 1-based and names the unit that receives the guide.
std::string gen_guiding_question(ChatBackend& llm, const std::string& key, const std::string& question,
                                 const Planning& planning, const std::vector<std::string>& steps, int i);

// ---- composition ----

struct GroundedCru {
  std::vector<std::string> steps;
  std::string focus_object;
  BBox bbox;  // original-image frame
  std::optional<std::string> guiding_question;
  PathSource source = PathSource::P0;
  bool is_error = false;  // holds err1 (p1) or err2 (p2)
};

struct ComposeDraft {
  std::string id;
  std::string question;
  std::string answer;
  int width = 0;  // original image
  int height = 0;
  double f_minus = 1.0;  // factors actually applied to the original
  double f_plus = 1.0;
  Planning planning;
  std::optional<std::string> planning_guide;
  std::vector<GroundedCru> units;  // p1, then p2, then p0
  DisplayMode display = DisplayMode::AppendAlias;
};

struct ComposedTurn {
  Turn turn;
  PatternSet labels;
  int unit = -1;  // index into units, -1 for the planning and review turns
};

struct ComposedPath {
  ComposeDraft draft;
  ObservationRef image0;  // the query image as rendered
  std::vector<ComposedTurn> turns;
  std::vector<ObservationRef> observations;  // from a shape-only run of the calls

  bool has_p1() const;
  double image0_factor() const;
  Trajectory to_trajectory() const;
};

class PatternConflict : public Error {
 public:
  explicit PatternConflict(const std::string& msg) : Error("PatternConflict", msg) {}
};

inline constexpr std::string_view kSelfCorrection =
    "Wait... Based on this image, my current step seems to be incorrect. Let's try a different approach.";
inline constexpr std::string_view kReviewOpening = "Let me review the previous steps based on this image.";
inline constexpr std::string_view kPlanningOpening = "Let's think step by step.";

// Slots that receive a guiding question, as 1-based positions in guide_units(draft).
std::vector<int> guide_slots(const ComposeDraft& draft);
// Unit texts in composed order, the planning unit first.
std::vector<std::string> guide_units(const ComposeDraft& draft);

// Materializes the tool calls and labels. Throws Error(TagMarkerInText) when step text would break the wire format.
ComposedPath apply_patterns(const ComposeDraft& draft);
ComposedPath compose_final(const std::vector<GroundedCru>& p1, const std::vector<GroundedCru>& p2,
                           const std::vector<GroundedCru>& p0, const Planning& planning, const std::string& answer,
                           ComposeDraft context);

// Violations of the composed-path invariants; empty when the path is sound.
std::vector<std::string> check_composed(const ComposedPath& path);

Json composed_to_json(const ComposedPath& path);
ComposedPath composed_from_json(const Json& j);

// Renders image 0, executes every call and writes {id}_{index}.png under dir. Returns the trajectory
// with image_paths pointing at the cached files.
Trajectory execute_composed(const ComposedPath& path, const Raster& original, const std::filesystem::path& dir);

// ---- export ----

enum class SftStage { Instructional, Practice };
std::string_view to_string(SftStage s);

Json export_sft_record(const Trajectory& t, SftStage stage);
std::vector<Json> export_sft(const std::vector<Trajectory>& dataset, SftStage stage);

struct PatternStats {
  std::size_t samples = 0;
  std::size_t crop = 0;
  std::size_t scale = 0;
  std::size_t display = 0;
  std::map<PatternLabel, std::size_t> labels;
  std::size_t cru_min = 0;
  std::size_t cru_max = 0;
  double cru_mean = 0.0;

  Json to_json() const;
};

PatternStats pattern_stats(const std::vector<Trajectory>& dataset);

}  // namespace cruforge::curation
