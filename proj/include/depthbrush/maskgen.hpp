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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "depthbrush/box.hpp"
#include "depthbrush/depth.hpp"
#include "depthbrush/error.hpp"
#include "depthbrush/imaging.hpp"

namespace depthbrush {

// Row-major {0,1} mask. In the subject role 1 = near subject; in the inpaint
// role 1 = regenerate, 0 = preserve.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
  }
  bool same_dims(int w, int h) const { return width == w && height == h; }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

inline BinaryMask complement(const BinaryMask& m) {
  BinaryMask out(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) out.bits[i] = m.bits[i] ? 0 : 1;
  return out;
}

enum class ElementShape { kRect, kEllipse };

struct StructuringElement {
  int size = 5;
  ElementShape shape = ElementShape::kRect;

  StructuringElement() = default;
  StructuringElement(int k, ElementShape s) : size(k), shape(s) {
    if (k < 1 || k % 2 == 0) {
      throw Error(ErrorCode::kConfigInvalid,
                  "structuring element size must be odd and >= 1, got " + std::to_string(k));
    }
  }

  int radius() const { return size / 2; }

  // Offsets covered by the element, relative to its center. The ellipse
  // variant is the inscribed disc dx^2 + dy^2 <= r^2.
  std::vector<std::pair<int, int>> offsets() const {
    std::vector<std::pair<int, int>> out;
    const int r = radius();
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (shape == ElementShape::kRect || dx * dx + dy * dy <= r * r) out.emplace_back(dx, dy);
      }
    }
    return out;
  }
};

struct EllipseRegion {
  double cx = 0.0;
  double cy = 0.0;
  double a = 1.0;
  double b = 1.0;
};

enum class MorphOp { kErode, kDilate, kOpen };

/// M_i = 1 iff D_i > t. Ties go to background.
inline BinaryMask threshold_mask(const DepthMap& depth, double t) {
  if (!depth.normalized) {
    throw Error(ErrorCode::kNotNormalized, "threshold_mask needs a normalized depth map");
  }
  if (!(t >= 0.0 && t <= 1.0)) {
    throw Error(ErrorCode::kThresholdOutOfRange, "threshold " + std::to_string(t));
  }
  BinaryMask m(depth.width, depth.height);
  for (std::size_t i = 0; i < depth.values.size(); ++i) m.bits[i] = depth.values[i] > t ? 1 : 0;
  return m;
}

namespace detail {

// One separable pass of a rect element along x (horizontal) or y. Cells
// outside the canvas count as 0, so erosion needs the whole run in bounds.
inline BinaryMask rect_pass(const BinaryMask& in, int r, bool horizontal, bool erode) {
  BinaryMask out(in.width, in.height);
  const int len = horizontal ? in.width : in.height;
  const int lines = horizontal ? in.height : in.width;
  std::vector<int> prefix(static_cast<std::size_t>(len) + 1);
  for (int line = 0; line < lines; ++line) {
    auto get = [&](int i) { return horizontal ? in.at(i, line) : in.at(line, i); };
    prefix[0] = 0;
    for (int i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + get(i);
    for (int i = 0; i < len; ++i) {
      const int lo = i - r, hi = i + r;
      std::uint8_t v;
      if (erode) {
        v = (lo >= 0 && hi < len && prefix[hi + 1] - prefix[lo] == 2 * r + 1) ? 1 : 0;
      } else {
        const int clo = std::max(lo, 0), chi = std::min(hi, len - 1);
        v = prefix[chi + 1] - prefix[clo] > 0 ? 1 : 0;
      }
      (horizontal ? out.at(i, line) : out.at(line, i)) = v;
    }
  }
  return out;
}

inline BinaryMask offsets_pass(const BinaryMask& in, const StructuringElement& elem, bool erode) {
  const auto offs = elem.offsets();
  BinaryMask out(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      bool all = true, any = false;
      for (const auto& [dx, dy] : offs) {
        const int nx = x + dx, ny = y + dy;
        const bool inside = nx >= 0 && ny >= 0 && nx < in.width && ny < in.height;
        const bool on = inside && in.at(nx, ny) != 0;
        all = all && on;
        any = any || on;
        if (erode ? !all : any) break;
      }
      out.at(x, y) = (erode ? all : any) ? 1 : 0;
    }
  }
  return out;
}

inline BinaryMask erode_or_dilate(const BinaryMask& in, const StructuringElement& elem,
                                  bool erode) {
  if (elem.shape == ElementShape::kRect) {
    const int r = elem.radius();
    if (r == 0) return in;
    return rect_pass(rect_pass(in, r, true, erode), r, false, erode);
  }
  return offsets_pass(in, elem, erode);
}

}  // namespace detail

/// Binary erosion, dilation or opening (erode then dilate). Out-of-canvas
/// element cells read as 0 in every case.
inline BinaryMask morph(const BinaryMask& mask, const StructuringElement& elem, MorphOp op) {
  switch (op) {
    case MorphOp::kErode: return detail::erode_or_dilate(mask, elem, true);
    case MorphOp::kDilate: return detail::erode_or_dilate(mask, elem, false);
    case MorphOp::kOpen:
      return detail::erode_or_dilate(detail::erode_or_dilate(mask, elem, true), elem, false);
  }
  return mask;
}

inline bool ellipse_contains(const EllipseRegion& e, int x, int y) {
  const double u = (x + 0.5 - e.cx) / e.a;
  const double v = (y + 0.5 - e.cy) / e.b;
  return u * u + v * v <= 1.0;
}

namespace detail {

// Calls fn(x, y) for every canvas pixel inside the ellipse.
template <typename Fn>
void for_each_ellipse_pixel(const EllipseRegion& e, int w, int h, Fn&& fn) {
  const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - e.a)) - 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - e.b)) - 1);
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(e.cx + e.a)) + 1);
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(e.cy + e.b)) + 1);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (ellipse_contains(e, x, y)) fn(x, y);
    }
  }
}

}  // namespace detail

/// Pixel-center rasterization; parts outside the canvas are clipped.
inline BinaryMask rasterize_ellipse(const EllipseRegion& region, int w, int h) {
  if (w < 1 || h < 1) throw Error(ErrorCode::kInvalidDims, "ellipse canvas");
  BinaryMask m(w, h);
  detail::for_each_ellipse_pixel(region, w, h, [&](int x, int y) { m.at(x, y) = 1; });
  return m;
}

struct FaceExpand {
  double fa = 1.2;
  double fb = 1.4;
};

inline EllipseRegion face_ellipse(const FaceBox& f, const FaceExpand& expand) {
  return {f.x + f.w / 2.0, f.y + f.h / 2.0, expand.fa * f.w / 2.0, expand.fb * f.h / 2.0};
}

/// Opens the subject mask, then clears an expanded ellipse around each face.
/// Subtraction comes last so the opening cannot grow back into a face.
inline BinaryMask build_inpaint_mask(const BinaryMask& subject, std::span<const FaceBox> faces,
                                     const FaceExpand& expand, const StructuringElement& elem) {
  if (expand.fa < 1.0 || expand.fb < 1.0) {
    throw Error(ErrorCode::kConfigInvalid, "face expansion factors must be >= 1");
  }
  BinaryMask out = morph(subject, elem, MorphOp::kOpen);
  for (const FaceBox& f : faces) {
    detail::for_each_ellipse_pixel(face_ellipse(f, expand), out.width, out.height,
                                   [&](int x, int y) { out.at(x, y) = 0; });
  }
  return out;
}

inline BinaryMask build_inpaint_mask(const BinaryMask& subject, std::span<const FaceBox> faces,
                                     const FaceExpand& expand, const StructuringElement& elem,
                                     int image_w, int image_h) {
  if (!subject.same_dims(image_w, image_h)) {
    throw Error(ErrorCode::kDimMismatch, "subject mask " + std::to_string(subject.width) + "x" +
                                             std::to_string(subject.height) + " vs image " +
                                             std::to_string(image_w) + "x" +
                                             std::to_string(image_h));
  }
  return build_inpaint_mask(subject, faces, expand, elem);
}

/// Masks persist as 8-bit gray: 0 -> 0, 1 -> 255.
inline std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m) {
  GrayImage g(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) g.data[i] = m.bits[i] ? 255 : 0;
  return encode_png(g);
}

/// Any sample >= 128 (first channel after RGB expansion) reads as 1.
inline BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes) {
  const RasterImage img = decode_png(bytes);
  BinaryMask m(img.width, img.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.data[3 * i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace depthbrush
