// SPDX-License-Identifier: Apache-2.0
#include "cruforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "cruforge/error.hpp"
#include "cruforge/util.hpp"

namespace cruforge {
namespace {

Raster decode_png(const std::vector<std::uint8_t>& bytes) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw InputError("BadImage", std::string("png: ") + img.message);
  img.format = PNG_FORMAT_RGB;
  Raster r(static_cast<int>(img.width), static_cast<int>(img.height));
  if (!png_image_finish_read(&img, nullptr, r.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw InputError("BadImage", std::string("png: ") + img.message);
  }
  return r;
}

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Raster decode_jpeg(const std::vector<std::uint8_t>& bytes) {
  jpeg_decompress_struct cinfo;
  JpegErr err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  Raster r;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw InputError("BadImage", "jpeg: decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  r = Raster(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = r.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * r.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return r;
}

struct Taps {
  int start;
  std::vector<double> w;
};

std::vector<Taps> triangle_taps(int in, int out) {
  double scale = static_cast<double>(in) / out;
  double filterscale = std::max(scale, 1.0);
  double support = filterscale;
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double center = (o + 0.5) * scale;
    int lo = std::max(static_cast<int>(center - support + 0.5), 0);
    int hi = std::min(static_cast<int>(center + support + 0.5), in);
    Taps& t = taps[static_cast<std::size_t>(o)];
    t.start = lo;
    double total = 0;
    for (int x = lo; x < hi; ++x) {
      double d = std::abs((x - center + 0.5) / filterscale);
      double w = d < 1.0 ? 1.0 - d : 0.0;
      t.w.push_back(w);
      total += w;
    }
    if (total > 0)
      for (auto& w : t.w) w /= total;
  }
  return taps;
}

}  // namespace

Raster decode_image(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes);
  throw InputError("BadImage", "unsupported image format (expected PNG or JPEG)");
}

Raster load_image(const std::filesystem::path& path) {
  std::string data = read_file(path);
  std::vector<std::uint8_t> bytes(data.begin(), data.end());
  try {
    return decode_image(bytes);
  } catch (const InputError& e) {
    throw InputError(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_png(const Raster& r) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(r.width);
  img.height = static_cast<png_uint_32>(r.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, r.rgb.data(), 0, nullptr))
    throw Error("PngEncode", img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, r.rgb.data(), 0, nullptr))
    throw Error("PngEncode", img.message);
  out.resize(size);
  return out;
}

void save_png(const std::filesystem::path& path, const Raster& r) {
  auto bytes = encode_png(r);
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

Raster crop_raster(const Raster& src, const BBox& box) {
  Raster out(box.width(), box.height());
  for (int y = 0; y < out.height; ++y)
    std::memcpy(out.px(0, y), src.px(box.x1, box.y1 + y), static_cast<std::size_t>(out.width) * 3);
  return out;
}

Raster resize_bilinear(const Raster& src, int out_w, int out_h) {
  if (out_w == src.width && out_h == src.height) return src;
  auto hx = triangle_taps(src.width, out_w);
  auto vy = triangle_taps(src.height, out_h);

  std::vector<double> mid(static_cast<std::size_t>(out_w) * src.height * 3);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Taps& t = hx[static_cast<std::size_t>(x)];
      double acc[3] = {0, 0, 0};
      for (std::size_t k = 0; k < t.w.size(); ++k) {
        const auto* p = src.px(t.start + static_cast<int>(k), y);
        for (int c = 0; c < 3; ++c) acc[c] += t.w[k] * p[c];
      }
      double* m = &mid[(static_cast<std::size_t>(y) * out_w + x) * 3];
      for (int c = 0; c < 3; ++c) m[c] = acc[c];
    }
  }

  Raster out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const Taps& t = vy[static_cast<std::size_t>(y)];
    for (int x = 0; x < out_w; ++x) {
      double acc[3] = {0, 0, 0};
      for (std::size_t k = 0; k < t.w.size(); ++k) {
        const double* m = &mid[(static_cast<std::size_t>(t.start + static_cast<int>(k)) * out_w + x) * 3];
        for (int c = 0; c < 3; ++c) acc[c] += t.w[k] * m[c];
      }
      auto* p = out.px(x, y);
      for (int c = 0; c < 3; ++c)
        p[c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
    }
  }
  return out;
}

}  // namespace cruforge
