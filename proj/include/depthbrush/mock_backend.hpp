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

// Deterministic stand-in for the diffusion backend. Every response is a pure
// function of the request, so pipeline runs against it are reproducible.
//
//   txt2img  horizontal color bands, 64 rows each; band colors derive from
//            fnv1a64(prompt) ^ seed
//   inpaint  input copied, mask-1 pixels overwritten with the txt2img bands
//            for the same (prompt, seed)
//   depth    radial gradient, 1 - (distance from center / max distance),
//            quantized to 16 bits

#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "depthbrush/depth.hpp"
#include "depthbrush/encoding.hpp"
#include "depthbrush/genclient.hpp"
#include "depthbrush/imaging.hpp"

namespace depthbrush {

inline constexpr int kMockBandRows = 64;

inline std::array<std::uint8_t, 3> mock_band_color(const std::string& prompt, std::uint64_t seed,
                                                   int band) {
  const std::uint64_t key = fnv1a64(prompt) ^ seed;
  const std::uint64_t c = splitmix64(key ^ static_cast<std::uint64_t>(band));
  return {static_cast<std::uint8_t>(c & 0xff), static_cast<std::uint8_t>((c >> 8) & 0xff),
          static_cast<std::uint8_t>((c >> 16) & 0xff)};
}

inline RasterImage mock_txt2img(const std::string& prompt, std::uint64_t seed, int w, int h) {
  RasterImage img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    const auto c = mock_band_color(prompt, seed, y / kMockBandRows);
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
    }
  }
  return img;
}

inline RasterImage mock_txt2img(const GenerationRequest& req) {
  return mock_txt2img(req.prompt, req.seed, req.width, req.height);
}

inline RasterImage mock_inpaint(const InpaintRequest& req) {
  validate(req);
  RasterImage out = req.image;
  if (out.channels != 3) throw Error(ErrorCode::kBadPayload, "inpaint image must be RGB");
  for (int y = 0; y < out.height; ++y) {
    const auto c = mock_band_color(req.prompt, req.seed, y / kMockBandRows);
    for (int x = 0; x < out.width; ++x) {
      if (req.mask.at(x, y)) {
        for (int k = 0; k < 3; ++k) out.at(x, y, k) = c[k];
      }
    }
  }
  return out;
}

/// Raw 16-bit-valued radial depth; the center pixel is the maximum.
inline DepthMap mock_depth(int w, int h) {
  DepthMap d;
  d.width = w;
  d.height = h;
  d.values.resize(static_cast<std::size_t>(w) * h);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double max_dist = std::hypot(cx, cy);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = max_dist > 0 ? 1.0 - std::hypot(x - cx, y - cy) / max_dist : 1.0;
      d.values[static_cast<std::size_t>(y) * w + x] = std::floor(v * 65535.0 + 0.5);
    }
  }
  return d;
}

enum class MockKind { kTxt2Img, kInpaint, kDepth };

/// Request JSON -> response JSON, exactly what the mock server answers.
inline Json mock_generate(MockKind kind, const Json& request) {
  switch (kind) {
    case MockKind::kTxt2Img: {
      const GenerationRequest req = generation_request_from_json(request);
      validate(req);
      return Json{{"image", base64_encode(encode_png(mock_txt2img(req)))}};
    }
    case MockKind::kInpaint: {
      const InpaintRequest req = inpaint_request_from_json(request);
      return Json{{"image", base64_encode(encode_png(mock_inpaint(req)))}};
    }
    case MockKind::kDepth: {
      const RasterImage img = detail::image_field(request, "image");
      return Json{{"depth", base64_encode(encode_depth_png16(mock_depth(img.width, img.height)))}};
    }
  }
  return {};
}

struct MockBackendOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 = any free port
  bool serve_depth = true;
};

/// In-process HTTP server implementing the three backend endpoints.
class MockBackend {
 public:
  explicit MockBackend(MockBackendOptions opts = {}) : opts_(std::move(opts)) {
    route("/v1/txt2img", MockKind::kTxt2Img);
    route("/v1/inpaint", MockKind::kInpaint);
    if (opts_.serve_depth) route("/v1/depth", MockKind::kDepth);
    port_ = opts_.port == 0 ? server_.bind_to_any_port(opts_.host)
                            : (server_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1);
    if (port_ <= 0) throw Error(ErrorCode::kIo, "mock backend could not bind");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  MockBackend(const MockBackend&) = delete;
  MockBackend& operator=(const MockBackend&) = delete;

  ~MockBackend() { stop(); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  // Blocks until stop() is called from another thread.
  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://" + opts_.host + ":" + std::to_string(port_); }

  int hits(const std::string& path) const {
    std::lock_guard lock(mu_);
    auto it = hits_.find(path);
    return it == hits_.end() ? 0 : it->second;
  }

 private:
  void route(const std::string& path, MockKind kind) {
    server_.Post(path, [this, path, kind](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mu_);
        ++hits_[path];
      }
      try {
        const Json out = mock_generate(kind, Json::parse(req.body));
        res.set_content(out.dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 400;
        res.set_content(Json{{"error", e.what()}}.dump(), "application/json");
      }
    });
  }

  MockBackendOptions opts_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  mutable std::mutex mu_;
  std::map<std::string, int> hits_;
};

}  // namespace depthbrush
