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

// Blocking HTTP+JSON client for a diffusion serving shim exposing
//   POST /v1/txt2img   {"prompt","width","height","steps","guidance","seed"}
//   POST /v1/inpaint   {"prompt","image","mask","guidance_scale",
//                       "num_inference_steps","strength","seed"}
//   POST /v1/depth     {"image"}
// Images travel as base64 PNG. Responses carry {"image": ...} or
// {"depth": <base64 16-bit gray PNG>}.

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "depthbrush/depth.hpp"
#include "depthbrush/encoding.hpp"
#include "depthbrush/error.hpp"
#include "depthbrush/imaging.hpp"
#include "depthbrush/maskgen.hpp"

namespace depthbrush {

using Json = nlohmann::json;

struct GenerationRequest {
  std::string prompt;
  int width = 1024;
  int height = 1024;
  int num_inference_steps = 4;
  double guidance_scale = 1.5;
  std::uint64_t seed = 0;
};

struct InpaintRequest {
  std::string prompt;
  RasterImage image;
  BinaryMask mask;  // 1 = regenerate, 0 = preserve
  double guidance_scale = 7.5;
  int num_inference_steps = 30;
  double strength = 0.99;
  std::uint64_t seed = 0;
};

struct BackendEndpoint {
  std::string base_url = "http://127.0.0.1:7860";
  double timeout_s = 300.0;
  int retry_on_transport_error = 1;
};

inline constexpr const char* kBackendUrlEnv = "DEPTHBRUSH_BACKEND_URL";

inline void validate(const GenerationRequest& r) {
  auto dim_ok = [](int v) { return v >= 64 && v <= 2048 && v % 8 == 0; };
  if (!dim_ok(r.width) || !dim_ok(r.height)) {
    throw Error(ErrorCode::kConfigInvalid,
                "generation size must be in [64, 2048] and a multiple of 8, got " +
                    std::to_string(r.width) + "x" + std::to_string(r.height));
  }
  if (r.num_inference_steps < 1) {
    throw Error(ErrorCode::kConfigInvalid, "num_inference_steps must be >= 1");
  }
}

inline void validate(const InpaintRequest& r) {
  if (!r.mask.same_dims(r.image.width, r.image.height)) {
    throw Error(ErrorCode::kDimMismatch, "inpaint mask must match the image dims");
  }
  if (!(r.strength >= 0.0 && r.strength <= 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "strength must be in [0, 1]");
  }
  if (r.num_inference_steps < 1) {
    throw Error(ErrorCode::kConfigInvalid, "num_inference_steps must be >= 1");
  }
}

// --- wire format ----------------------------------------------------------

inline Json to_json(const GenerationRequest& r) {
  return Json{{"prompt", r.prompt},   {"width", r.width},
              {"height", r.height},   {"steps", r.num_inference_steps},
              {"guidance", r.guidance_scale}, {"seed", r.seed}};
}

inline Json to_json(const InpaintRequest& r) {
  return Json{{"prompt", r.prompt},
              {"image", base64_encode(encode_png(r.image))},
              {"mask", base64_encode(encode_mask_png(r.mask))},
              {"guidance_scale", r.guidance_scale},
              {"num_inference_steps", r.num_inference_steps},
              {"strength", r.strength},
              {"seed", r.seed}};
}

namespace detail {

template <typename T>
T json_field(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorCode::kBadPayload, std::string("missing field ") + key);
  try {
    return it->get<T>();
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kBadPayload, std::string("field ") + key + ": " + e.what());
  }
}

inline RasterImage image_field(const Json& j, const char* key) {
  const auto bytes = base64_decode(json_field<std::string>(j, key));
  try {
    return decode_png(bytes);
  } catch (const Error& e) {
    throw Error(ErrorCode::kBadPayload, std::string(key) + ": " + e.detail());
  }
}

}  // namespace detail

inline GenerationRequest generation_request_from_json(const Json& j) {
  GenerationRequest r;
  r.prompt = detail::json_field<std::string>(j, "prompt");
  r.width = detail::json_field<int>(j, "width");
  r.height = detail::json_field<int>(j, "height");
  r.num_inference_steps = detail::json_field<int>(j, "steps");
  r.guidance_scale = detail::json_field<double>(j, "guidance");
  r.seed = detail::json_field<std::uint64_t>(j, "seed");
  return r;
}

inline InpaintRequest inpaint_request_from_json(const Json& j) {
  InpaintRequest r;
  r.prompt = detail::json_field<std::string>(j, "prompt");
  r.image = detail::image_field(j, "image");
  const auto mask_bytes = base64_decode(detail::json_field<std::string>(j, "mask"));
  try {
    r.mask = decode_mask_png(mask_bytes);
  } catch (const Error& e) {
    throw Error(ErrorCode::kBadPayload, "mask: " + e.detail());
  }
  r.guidance_scale = detail::json_field<double>(j, "guidance_scale");
  r.num_inference_steps = detail::json_field<int>(j, "num_inference_steps");
  r.strength = detail::json_field<double>(j, "strength");
  r.seed = detail::json_field<std::uint64_t>(j, "seed");
  return r;
}

// --- client ---------------------------------------------------------------

struct AttemptRecord {
  std::string path;
  int attempt = 0;       // 1-based
  int status = 0;        // HTTP status, 0 on transport failure
  std::string outcome;   // "ok", "transport: ...", "http 404", ...
};

struct SplitUrl {
  std::string scheme_host_port;
  std::string prefix;
};

inline SplitUrl split_base_url(std::string url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) url = "http://" + url;
  const auto host_start = url.find("://") + 3;
  const auto path_start = url.find('/', host_start);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = url;
  } else {
    out.scheme_host_port = url.substr(0, path_start);
    out.prefix = url.substr(path_start);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  }
  if (out.scheme_host_port.rfind("http://", 0) != 0) {
    throw Error(ErrorCode::kConfigInvalid, "only http:// backends are supported: " + url);
  }
  return out;
}

/// Stateless apart from its configuration; safe to share across threads.
/// Transport failures (refused, reset, timeout) are retried up to
/// retry_on_transport_error times; HTTP error statuses never are.
class BackendClient {
 public:
  using AttemptSink = std::function<void(const AttemptRecord&)>;

  explicit BackendClient(BackendEndpoint ep, AttemptSink sink = {})
      : endpoint_(std::move(ep)), url_(split_base_url(endpoint_.base_url)), sink_(std::move(sink)) {
    if (!(endpoint_.timeout_s > 0.0)) {
      throw Error(ErrorCode::kConfigInvalid, "backend timeout must be > 0");
    }
  }

  const BackendEndpoint& endpoint() const { return endpoint_; }

  RasterImage txt2img(const GenerationRequest& req) const {
    validate(req);
    const Json resp = post("/v1/txt2img", to_json(req));
    RasterImage img = detail::image_field(resp, "image");
    if (img.width != req.width || img.height != req.height) {
      throw Error(ErrorCode::kBadPayload, "txt2img returned " + std::to_string(img.width) + "x" +
                                              std::to_string(img.height) + ", expected " +
                                              std::to_string(req.width) + "x" +
                                              std::to_string(req.height));
    }
    return img;
  }

  RasterImage inpaint(const InpaintRequest& req) const {
    validate(req);
    const Json resp = post("/v1/inpaint", to_json(req));
    RasterImage img = detail::image_field(resp, "image");
    if (!img.same_dims(req.image)) {
      throw Error(ErrorCode::kBadPayload, "inpaint returned " + std::to_string(img.width) + "x" +
                                              std::to_string(img.height));
    }
    return img;
  }

  /// Raw (unnormalized) depth from the backend's estimator.
  DepthMap estimate_depth_remote(const RasterImage& image) const {
    const Json resp = post("/v1/depth", Json{{"image", base64_encode(encode_png(image))}});
    const auto bytes = base64_decode(detail::json_field<std::string>(resp, "depth"));
    DepthMap d;
    try {
      d = load_depth(bytes, DepthFormat::kPng16);
    } catch (const Error& e) {
      throw Error(ErrorCode::kBadPayload, "depth: " + e.detail());
    }
    if (d.width != image.width || d.height != image.height) {
      throw Error(ErrorCode::kBadPayload, "depth map " + std::to_string(d.width) + "x" +
                                              std::to_string(d.height) + " does not match image");
    }
    return d;
  }

 private:
  Json post(const std::string& path, const Json& body) const {
    const std::string payload = body.dump();
    const std::string full_path = url_.prefix + path;
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(endpoint_.timeout_s));
    const int attempts = 1 + std::max(0, endpoint_.retry_on_transport_error);
    std::string last_error;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      httplib::Client cli(url_.scheme_host_port);
      cli.set_connection_timeout(timeout);
      cli.set_read_timeout(timeout);
      cli.set_write_timeout(timeout);
      cli.set_keep_alive(false);
      auto res = cli.Post(full_path, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        notify({full_path, attempt, 0, "transport: " + last_error});
        continue;
      }
      notify({full_path, attempt, res->status, res->status < 300 ? "ok" :
                                                   "http " + std::to_string(res->status)});
      if (res->status >= 400 && res->status < 500) {
        throw Error(ErrorCode::kBackendRejected,
                    "HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body);
      }
      if (res->status >= 300) {
        throw Error(ErrorCode::kBackendFailed,
                    "HTTP " + std::to_string(res->status) + " from " + path + ": " + res->body);
      }
      try {
        return Json::parse(res->body);
      } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::kBadPayload, std::string("response is not JSON: ") + e.what());
      }
    }
    throw Error(ErrorCode::kBackendUnreachable,
                endpoint_.base_url + path + " after " + std::to_string(attempts) +
                    " attempt(s): " + last_error);
  }

  void notify(const AttemptRecord& rec) const {
    if (sink_) sink_(rec);
  }

  BackendEndpoint endpoint_;
  SplitUrl url_;
  AttemptSink sink_;
};

/// DEPTHBRUSH_BACKEND_URL, when set and non-empty, replaces base_url.
inline void apply_backend_env(BackendEndpoint& ep) {
  if (const char* v = std::getenv(kBackendUrlEnv); v != nullptr && *v != '\0') ep.base_url = v;
}

}  // namespace depthbrush
