// SPDX-License-Identifier: Apache-2.0
#include "cruforge/toolbox.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cruforge/error.hpp"

namespace cruforge {

ImageStore::ImageStore(Raster original, DisplayMode mode) : mode_(mode) {
  ImageRecord rec;
  rec.index = 0;
  rec.width = original.width;
  rec.height = original.height;
  rec.pixels = std::make_shared<const Raster>(std::move(original));
  records_.push_back(std::move(rec));
}

ImageStore ImageStore::shapes_only(int width, int height, DisplayMode mode) {
  ImageStore s;
  s.mode_ = mode;
  s.with_pixels_ = false;
  ImageRecord rec;
  rec.width = width;
  rec.height = height;
  s.records_.push_back(rec);
  return s;
}

const ImageRecord& ImageStore::at(int index) const {
  if (index < 0 || static_cast<std::size_t>(index) >= records_.size())
    throw ToolError("IndexOutOfRange", fmt::format("image_index {} out of range (store has {})", index, records_.size()));
  return records_[static_cast<std::size_t>(index)];
}

void ImageStore::validate(const ToolCall& call) const {
  const ImageRecord& src = at(image_index_of(call));
  if (const auto* c = std::get_if<Crop>(&call)) {
    if (!c->bbox.fits(src.width, src.height))
      throw ToolError("BboxOutOfBounds",
                      fmt::format("bbox [{}, {}, {}, {}] outside image {} ({} x {})", c->bbox.x1, c->bbox.y1,
                                  c->bbox.x2, c->bbox.y2, src.index, src.width, src.height));
  } else if (const auto* s = std::get_if<Scale>(&call)) {
    if (!(s->scale_factor > 0.0) || !std::isfinite(s->scale_factor))
      throw ToolError("NonPositiveScale", fmt::format("scale_factor {} is not positive", s->scale_factor));
  }
}

ObservationRef ImageStore::exec(const ToolCall& call) {
  validate(call);
  const ImageRecord src = at(image_index_of(call));
  ImageRecord rec;
  rec.index = static_cast<int>(records_.size());
  if (const auto* c = std::get_if<Crop>(&call)) {
    rec.width = c->bbox.width();
    rec.height = c->bbox.height();
    rec.provenance = {Provenance::Kind::CropOf, src.index, c->bbox, 1.0};
    if (with_pixels_) rec.pixels = std::make_shared<const Raster>(crop_raster(*src.pixels, c->bbox));
  } else if (const auto* s = std::get_if<Scale>(&call)) {
    rec.width = scaled_dim(src.width, s->scale_factor);
    rec.height = scaled_dim(src.height, s->scale_factor);
    rec.provenance = {Provenance::Kind::ScaleOf, src.index, {}, s->scale_factor};
    if (with_pixels_)
      rec.pixels = std::make_shared<const Raster>(resize_bilinear(*src.pixels, rec.width, rec.height));
  } else {
    if (mode_ == DisplayMode::ReuseIndex) return src.ref();
    rec.width = src.width;
    rec.height = src.height;
    rec.provenance = {Provenance::Kind::DisplayOf, src.index, {}, 1.0};
    rec.pixels = src.pixels;
  }
  records_.push_back(rec);
  return rec.ref();
}

ObservationRef exec_tool(ImageStore& store, const ToolCall& call) { return store.exec(call); }

int token_count(int width, int height, int patch) {
  return ((width + patch - 1) / patch) * ((height + patch - 1) / patch);
}

int scaled_dim(int dim, double factor) { return std::max(1L, std::lround(dim * factor)); }

bool contains(const BBox& outer, const BBox& inner) {
  return inner.x1 >= outer.x1 && inner.y1 >= outer.y1 && inner.x2 <= outer.x2 && inner.y2 <= outer.y2;
}

BBox translate_into_crop(const BBox& outer, const BBox& inner) {
  if (!contains(outer, inner))
    throw Error("NotContained", fmt::format("[{}, {}, {}, {}] not inside [{}, {}, {}, {}]", inner.x1, inner.y1,
                                            inner.x2, inner.y2, outer.x1, outer.y1, outer.x2, outer.y2));
  return BBox{inner.x1 - outer.x1, inner.y1 - outer.y1, inner.x2 - outer.x1, inner.y2 - outer.y1};
}

BBox embed_from_crop(const BBox& outer, const BBox& inner_local) {
  return BBox{inner_local.x1 + outer.x1, inner_local.y1 + outer.y1, inner_local.x2 + outer.x1,
              inner_local.y2 + outer.y1};
}

BBox scale_bbox(const BBox& b, double f) {
  // The epsilon keeps exact products such as 3 * (1/3 * 3) from flooring one pixel low.
  constexpr double eps = 1e-9;
  BBox out{static_cast<int>(std::floor(b.x1 * f + eps)), static_cast<int>(std::floor(b.y1 * f + eps)),
           static_cast<int>(std::ceil(b.x2 * f - eps)), static_cast<int>(std::ceil(b.y2 * f - eps))};
  if (out.x2 <= out.x1) out.x2 = out.x1 + 1;
  if (out.y2 <= out.y1) out.y2 = out.y1 + 1;
  return out;
}

BBox union_bbox(const BBox& a, const BBox& b) {
  return BBox{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
}

std::optional<BBox> clip_bbox(const BBox& b, int width, int height) {
  BBox out{std::clamp(b.x1, 0, width), std::clamp(b.y1, 0, height), std::clamp(b.x2, 0, width),
           std::clamp(b.y2, 0, height)};
  if (out.x1 >= out.x2 || out.y1 >= out.y2) return std::nullopt;
  return out;
}

}  // namespace cruforge
