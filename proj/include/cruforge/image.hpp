// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cruforge/protocol.hpp"

namespace cruforge {

// 8-bit RGB, row-major, no padding.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Raster() = default;
  Raster(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* px(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* px(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  friend bool operator==(const Raster&, const Raster&) = default;
};

// PNG or JPEG, detected from the file signature.
Raster load_image(const std::filesystem::path& path);
Raster decode_image(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_png(const Raster& r);
void save_png(const std::filesystem::path& path, const Raster& r);

Raster crop_raster(const Raster& src, const BBox& box);
// Separable triangle-filter resampling; widens the kernel when shrinking.
Raster resize_bilinear(const Raster& src, int out_w, int out_h);

}  // namespace cruforge
