// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "cruforge/image.hpp"
#include "cruforge/protocol.hpp"

namespace cruforge {

struct Provenance {
  enum class Kind { Original, CropOf, ScaleOf, DisplayOf };
  Kind kind = Kind::Original;
  int parent = -1;
  BBox bbox;
  double factor = 1.0;
};

struct ImageRecord {
  int index = 0;
  int width = 0;
  int height = 0;
  std::shared_ptr<const Raster> pixels;  // null in shape-only stores
  Provenance provenance;

  ObservationRef ref() const { return ObservationRef{index, width, height}; }
};

// How display_image is indexed. AppendAlias gives every tool result a fresh index;
// ReuseIndex returns the displayed record itself.
enum class DisplayMode { AppendAlias, ReuseIndex };

class ImageStore {
 public:
  explicit ImageStore(Raster original, DisplayMode mode = DisplayMode::AppendAlias);
  // Tracks dimensions only; exec() computes geometry but no pixels.
  static ImageStore shapes_only(int width, int height, DisplayMode mode = DisplayMode::AppendAlias);

  std::size_t size() const { return records_.size(); }
  const ImageRecord& at(int index) const;  // throws ToolError(IndexOutOfRange)
  const std::vector<ImageRecord>& records() const { return records_; }
  DisplayMode display_mode() const { return mode_; }
  bool has_pixels() const { return with_pixels_; }

  // Copies the record list; pixel buffers are shared and immutable.
  ImageStore fork() const { return *this; }

  void validate(const ToolCall& call) const;
  ObservationRef exec(const ToolCall& call);

 private:
  ImageStore() = default;
  std::vector<ImageRecord> records_;
  DisplayMode mode_ = DisplayMode::AppendAlias;
  bool with_pixels_ = true;
};

ObservationRef exec_tool(ImageStore& store, const ToolCall& call);

int token_count(int width, int height, int patch = 28);
int scaled_dim(int dim, double factor);  // round half away from zero, at least 1

bool contains(const BBox& outer, const BBox& inner);
BBox translate_into_crop(const BBox& outer, const BBox& inner);  // throws Error(NotContained)
BBox embed_from_crop(const BBox& outer, const BBox& inner_local);
BBox scale_bbox(const BBox& b, double f);
BBox union_bbox(const BBox& a, const BBox& b);
// Intersection with the frame [0,w)x[0,h); nullopt when nothing remains.
std::optional<BBox> clip_bbox(const BBox& b, int width, int height);

}  // namespace cruforge
