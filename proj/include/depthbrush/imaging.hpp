// Copyright 2026 The Depthbrush Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "depthbrush/error.hpp"

namespace depthbrush {

// Interleaved 8-bit raster, row-major. channels is 3 (RGB) or 1 (gray).
struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  RasterImage() = default;
  RasterImage(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {
    if (w < 1 || h < 1 || (c != 1 && c != 3)) {
      throw Error(ErrorCode::kInvalidDims,
                  "raster " + std::to_string(w) + "x" + std::to_string(h) + "x" +
                      std::to_string(c));
    }
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  bool same_dims(const RasterImage& o) const {
    return width == o.width && height == o.height;
  }
  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) {
      throw Error(ErrorCode::kInvalidDims,
                  "gray " + std::to_string(w) + "x" + std::to_string(h));
    }
  }

  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

namespace detail {

struct PngReadState {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

struct PngWriteState {
  std::vector<std::uint8_t> out;
  std::string error;
};

inline void png_read_callback(png_structp png, png_bytep dst, png_size_t n) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->offset + n > st->bytes.size()) {
    png_error(png, "unexpected end of stream");
  }
  std::memcpy(dst, st->bytes.data() + st->offset, n);
  st->offset += n;
}

inline void png_write_callback(png_structp png, png_bytep src, png_size_t n) {
  auto* st = static_cast<PngWriteState*>(png_get_io_ptr(png));
  st->out.insert(st->out.end(), src, src + n);
}

inline void png_flush_callback(png_structp) {}

inline void png_error_callback(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err != nullptr) *err = msg;
  png_longjmp(png, 1);
}

inline void png_warning_callback(png_structp, png_const_charp) {}

// Decoded samples before any mapping to the public image types. Rows are
// tightly packed; 16-bit samples are stored big-endian as in the file.
struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint8_t> samples;
};

enum class PngExpand { kToRgb8, kRaw };

struct PngDecodeResult {
  DecodedPng image;
  std::vector<png_bytep> rows;
  std::string error;
  bool unsupported = false;
};

// setjmp lives here, with only trivially destructible locals, so a longjmp
// from libpng never skips a destructor.
inline bool decode_png_into(PngDecodeResult& result, std::span<const std::uint8_t> bytes,
                            PngExpand mode) {
  static constexpr std::size_t kSig = 8;
  if (bytes.size() < kSig || png_sig_cmp(bytes.data(), 0, kSig) != 0) {
    result.error = "missing PNG signature";
    return false;
  }
  PngReadState state{bytes, 0};
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &result.error,
                                           png_error_callback, png_warning_callback);
  if (png == nullptr) {
    result.error = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    result.error = "png_create_info_struct failed";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &state, png_read_callback);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);

  if (mode == PngExpand::kToRgb8) {
    if (bit_depth == 16) {
      result.unsupported = true;
      result.error = "16-bit PNG is not supported for color images";
      png_destroy_read_struct(&png, &info, nullptr);
      return false;
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) {
      png_set_expand_gray_1_2_4_to_8(png);
    }
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  result.image.width = static_cast<int>(w);
  result.image.height = static_cast<int>(h);
  result.image.channels = png_get_channels(png, info);
  result.image.bit_depth = png_get_bit_depth(png, info);
  const png_size_t rowbytes = png_get_rowbytes(png, info);
  result.image.samples.resize(rowbytes * h);
  result.rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) {
    result.rows[y] = result.image.samples.data() + y * rowbytes;
  }
  png_read_image(png, result.rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool encode_png_into(PngWriteState& state, const std::uint8_t* samples, int width,
                            int height, int channels, int bit_depth) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &state.error,
                                            png_error_callback, png_warning_callback);
  if (png == nullptr) return false;
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &state, png_write_callback, png_flush_callback);
  const int color_type = channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  const std::size_t rowbytes =
      static_cast<std::size_t>(width) * channels * (bit_depth == 16 ? 2 : 1);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(samples + y * rowbytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

inline std::vector<std::uint8_t> encode_png_samples(const std::uint8_t* samples, int width,
                                                    int height, int channels, int bit_depth) {
  PngWriteState state;
  if (!encode_png_into(state, samples, width, height, channels, bit_depth)) {
    throw Error(ErrorCode::kIo, "PNG encode failed: " + state.error);
  }
  return std::move(state.out);
}

inline DecodedPng decode_png_raw(std::span<const std::uint8_t> bytes, PngExpand mode) {
  PngDecodeResult result;
  if (!decode_png_into(result, bytes, mode)) {
    throw Error(result.unsupported ? ErrorCode::kUnsupportedPng : ErrorCode::kMalformedPng,
                result.error.empty() ? "undecodable PNG stream" : result.error);
  }
  return std::move(result.image);
}

}  // namespace detail

/// Decodes an 8-bit PNG to RGB. Palette and low-bit gray are expanded, gray
/// is replicated to RGB and alpha is dropped. 16-bit files are rejected with
/// UnsupportedPng; anything libpng cannot parse is MalformedPng.
inline RasterImage decode_png(std::span<const std::uint8_t> bytes) {
  detail::DecodedPng raw = detail::decode_png_raw(bytes, detail::PngExpand::kToRgb8);
  if (raw.channels != 3 || raw.bit_depth != 8) {
    throw Error(ErrorCode::kUnsupportedPng, "unexpected sample layout after expansion");
  }
  RasterImage img;
  img.width = raw.width;
  img.height = raw.height;
  img.channels = 3;
  img.data = std::move(raw.samples);
  return img;
}

inline std::vector<std::uint8_t> encode_png(const RasterImage& img) {
  return detail::encode_png_samples(img.data.data(), img.width, img.height, img.channels, 8);
}

inline std::vector<std::uint8_t> encode_png(const GrayImage& img) {
  return detail::encode_png_samples(img.data.data(), img.width, img.height, 1, 8);
}

// Rec. 601 luma with round-half-up, in exact integer arithmetic.
inline std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int y = (299 * r + 587 * g + 114 * b + 500) / 1000;
  return static_cast<std::uint8_t>(std::min(y, 255));
}

inline GrayImage to_grayscale(const RasterImage& img) {
  if (img.channels != 3) {
    throw Error(ErrorCode::kInvalidDims, "to_grayscale expects 3 channels");
  }
  GrayImage out(img.width, img.height);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < n; ++i) {
    out.data[i] = luma(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
  }
  return out;
}

inline RasterImage gray_to_rgb(const GrayImage& g) {
  RasterImage out(g.width, g.height, 3);
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = g.data[i];
  }
  return out;
}

/// Bilinear resampling with half-pixel centers:
///   src = (dst + 0.5) * (in / out) - 0.5, clamped to [0, in - 1].
inline RasterImage resize_bilinear(const RasterImage& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) {
    throw Error(ErrorCode::kInvalidDims, "resize target " + std::to_string(out_w) + "x" +
                                             std::to_string(out_h));
  }
  struct Tap {
    int i0, i1;
    double frac;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
      double s = (d + 0.5) * ratio - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(s));
      t[d] = {i0, std::min(i0 + 1, in - 1), s - i0};
    }
    return t;
  };
  const auto tx = taps(img.width, out_w);
  const auto ty = taps(img.height, out_h);
  RasterImage out(out_w, out_h, img.channels);
  for (int y = 0; y < out_h; ++y) {
    const Tap& vy = ty[y];
    for (int x = 0; x < out_w; ++x) {
      const Tap& vx = tx[x];
      for (int c = 0; c < img.channels; ++c) {
        const double p00 = img.at(vx.i0, vy.i0, c), p10 = img.at(vx.i1, vy.i0, c);
        const double p01 = img.at(vx.i0, vy.i1, c), p11 = img.at(vx.i1, vy.i1, c);
        const double top = p00 * (1.0 - vx.frac) + p10 * vx.frac;
        const double bottom = p01 * (1.0 - vx.frac) + p11 * vx.frac;
        const double v = top * (1.0 - vy.frac) + bottom * vy.frac;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace depthbrush
