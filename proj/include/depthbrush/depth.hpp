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
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "depthbrush/error.hpp"
#include "depthbrush/imaging.hpp"

namespace depthbrush {

// Relative depth, larger = closer to the camera. A freshly loaded map holds
// the estimator's raw values; normalize_depth() rescales it to [0,1].
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;
  bool normalized = false;
  double raw_min = 0.0;
  double raw_max = 0.0;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

enum class DepthFormat { kPng16, kPfm };

inline DepthFormat sniff_depth_format(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kPngSig[] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::equal(std::begin(kPngSig), std::end(kPngSig), bytes.begin())) {
    return DepthFormat::kPng16;
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F')) {
    return DepthFormat::kPfm;
  }
  throw Error(ErrorCode::kMalformedDepth, "neither PNG nor PFM signature");
}

namespace detail {

inline DepthMap load_png16(std::span<const std::uint8_t> bytes) {
  DecodedPng raw;
  try {
    raw = decode_png_raw(bytes, PngExpand::kRaw);
  } catch (const Error& e) {
    throw Error(ErrorCode::kMalformedDepth, e.detail());
  }
  if (raw.channels != 1 || raw.bit_depth != 16) {
    throw Error(ErrorCode::kMalformedDepth,
                "depth PNG must be single-channel 16-bit, got " + std::to_string(raw.channels) +
                    " channel(s) at " + std::to_string(raw.bit_depth) + " bits");
  }
  DepthMap d;
  d.width = raw.width;
  d.height = raw.height;
  d.values.resize(static_cast<std::size_t>(raw.width) * raw.height);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    d.values[i] = static_cast<double>((raw.samples[2 * i] << 8) | raw.samples[2 * i + 1]);
  }
  return d;
}

// Reads one whitespace-delimited header token; PFM headers are ASCII lines
// but some writers use arbitrary whitespace.
inline std::string_view pfm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; };
  while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
  const std::size_t start = pos;
  while (pos < bytes.size() && !is_space(bytes[pos])) ++pos;
  return {reinterpret_cast<const char*>(bytes.data()) + start, pos - start};
}

template <typename T>
T parse_pfm_number(std::string_view tok) {
  T v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw Error(ErrorCode::kMalformedDepth, "bad PFM header token '" + std::string(tok) + "'");
  }
  return v;
}

inline DepthMap load_pfm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  const std::string_view magic = pfm_token(bytes, pos);
  if (magic == "PF") throw Error(ErrorCode::kMalformedDepth, "3-channel PFM is not a depth map");
  if (magic != "Pf") throw Error(ErrorCode::kMalformedDepth, "bad PFM magic");
  const int w = parse_pfm_number<int>(pfm_token(bytes, pos));
  const int h = parse_pfm_number<int>(pfm_token(bytes, pos));
  const double scale = parse_pfm_number<double>(pfm_token(bytes, pos));
  if (w < 1 || h < 1 || scale == 0.0 || !std::isfinite(scale)) {
    throw Error(ErrorCode::kMalformedDepth, "bad PFM dimensions or scale");
  }
  ++pos;  // exactly one whitespace byte separates the header from the raster
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (pos > bytes.size() || bytes.size() - pos < n * 4) {
    throw Error(ErrorCode::kMalformedDepth, "truncated PFM raster");
  }
  const bool little = scale < 0;
  const bool swap = little != (std::endian::native == std::endian::little);
  DepthMap d;
  d.width = w;
  d.height = h;
  d.values.resize(n);
  for (int row = 0; row < h; ++row) {
    // PFM stores rows bottom-to-top.
    const std::size_t dst_row = static_cast<std::size_t>(h - 1 - row);
    for (int x = 0; x < w; ++x) {
      std::uint32_t bits;
      std::memcpy(&bits, bytes.data() + pos + (static_cast<std::size_t>(row) * w + x) * 4, 4);
      if (swap) bits = __builtin_bswap32(bits);
      const float f = std::bit_cast<float>(bits);
      if (!std::isfinite(f)) throw Error(ErrorCode::kMalformedDepth, "non-finite PFM sample");
      d.values[dst_row * w + x] = f;
    }
  }
  return d;
}

}  // namespace detail

/// Ingests an external estimator's output verbatim (no rescaling).
inline DepthMap load_depth(std::span<const std::uint8_t> bytes, DepthFormat format) {
  return format == DepthFormat::kPng16 ? detail::load_png16(bytes) : detail::load_pfm(bytes);
}

inline DepthMap load_depth(std::span<const std::uint8_t> bytes) {
  return load_depth(bytes, sniff_depth_format(bytes));
}

/// Per-image min-max rescale to [0,1]. A constant map becomes all zeros.
/// Monotone, so the larger-is-closer convention carries over.
inline DepthMap normalize_depth(const DepthMap& raw) {
  if (raw.normalized) return raw;
  DepthMap out;
  out.width = raw.width;
  out.height = raw.height;
  out.normalized = true;
  out.values.resize(raw.values.size());
  if (raw.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(raw.values.begin(), raw.values.end());
  out.raw_min = *lo;
  out.raw_max = *hi;
  const double range = out.raw_max - out.raw_min;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    out.values[i] = (raw.values[i] - out.raw_min) / range;
  }
  return out;
}

/// Raw map -> single-channel 16-bit PNG. Values are rounded and clamped to
/// [0, 65535]; integer-valued maps in range round-trip exactly.
inline std::vector<std::uint8_t> encode_depth_png16(const DepthMap& d) {
  std::vector<std::uint8_t> samples(d.values.size() * 2);
  const double gain = d.normalized ? 65535.0 : 1.0;
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const double v = std::clamp(std::floor(d.values[i] * gain + 0.5), 0.0, 65535.0);
    const auto q = static_cast<std::uint16_t>(v);
    samples[2 * i] = static_cast<std::uint8_t>(q >> 8);
    samples[2 * i + 1] = static_cast<std::uint8_t>(q & 0xff);
  }
  return detail::encode_png_samples(samples.data(), d.width, d.height, 1, 16);
}

/// Little-endian PFM (scale -1), rows bottom-to-top. Values are narrowed to
/// float32, so maps ingested from PNG16 or PFM round-trip exactly.
inline std::vector<std::uint8_t> encode_pfm(const DepthMap& d) {
  const std::string header =
      "Pf\n" + std::to_string(d.width) + " " + std::to_string(d.height) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + d.values.size() * 4);
  for (int row = d.height - 1; row >= 0; --row) {
    for (int x = 0; x < d.width; ++x) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(d.at(x, row)));
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      const auto* p = reinterpret_cast<const std::uint8_t*>(&bits);
      out.insert(out.end(), p, p + 4);
    }
  }
  return out;
}

}  // namespace depthbrush
