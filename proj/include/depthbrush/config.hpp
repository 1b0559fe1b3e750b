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

// Run configuration and its flat text form:
//
//   # comment
//   background_prompt = pirate ship
//   depth_threshold   = 0.6
//   detector.scale_factor = 1.1
//
// Keys are dotted paths into PipelineConfig (see config_keys()). Relative
// paths in a file resolve against the file's directory.

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "depthbrush/depth.hpp"
#include "depthbrush/error.hpp"
#include "depthbrush/facedetect.hpp"
#include "depthbrush/genclient.hpp"
#include "depthbrush/maskgen.hpp"

#ifndef DEPTHBRUSH_DATA_DIR
#define DEPTHBRUSH_DATA_DIR "data"
#endif

namespace depthbrush {

namespace fs = std::filesystem;

inline fs::path default_cascade_path() {
  return fs::path(DEPTHBRUSH_DATA_DIR) / "haarcascade_frontalface_default.xml";
}

struct DepthSource {
  enum class Kind { kFile, kRemote };
  Kind kind = Kind::kFile;
  fs::path path;
  std::optional<DepthFormat> format;  // nullopt: sniff the bytes
};

struct Seeds {
  std::uint64_t background = 0;
  std::uint64_t inpaint = 0;
};

struct GenParams {
  int background_width = 1024;
  int background_height = 1024;
  int background_steps = 4;
  double background_guidance = 1.5;
  int inpaint_steps = 30;
  double inpaint_guidance = 7.5;
  double inpaint_strength = 0.99;
};

struct DetectorConfig {
  fs::path cascade_path = default_cascade_path();
  DetectorParams params;
};

struct PipelineConfig {
  fs::path input_image;
  DepthSource depth_source;
  std::string background_prompt;
  std::string clothes_prompt;
  double depth_threshold = 0.6;
  int morph_kernel = 5;
  ElementShape morph_shape = ElementShape::kRect;
  FaceExpand face_expand;
  DetectorConfig detector;
  BackendEndpoint backend;
  Seeds seeds;
  GenParams gen_params;
  fs::path output_dir = "run";
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw Error(ErrorCode::kConfigInvalid, key + ": cannot parse '" + v + "'");
  }
  return out;
}

inline fs::path parse_path(const std::string& v, const fs::path& base) {
  fs::path p(v);
  return (p.is_relative() && !base.empty()) ? base / p : p;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(PipelineConfig&, const std::string&, const fs::path&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

/// Every settable field, in a stable order. CLI flags mirror these names.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::fmt_double;
  using detail::parse_path;
  using detail::parse_value;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto str = [&](std::string name, std::string help, std::string PipelineConfig::*field) {
      k.push_back({name, help,
                   [field](PipelineConfig& c, const std::string& v, const fs::path&) { c.*field = v; },
                   [field](const PipelineConfig& c) { return c.*field; }});
    };
    auto path = [&](std::string name, std::string help, auto accessor) {
      k.push_back({name, help,
                   [accessor](PipelineConfig& c, const std::string& v, const fs::path& base) {
                     accessor(c) = parse_path(v, base);
                   },
                   [accessor](const PipelineConfig& c) {
                     return accessor(const_cast<PipelineConfig&>(c)).string();
                   }});
    };
    auto num = [&](std::string name, std::string help, auto accessor) {
      k.push_back({name, help,
                   [accessor, name](PipelineConfig& c, const std::string& v, const fs::path&) {
                     auto& ref = accessor(c);
                     ref = parse_value<std::decay_t<decltype(ref)>>(name, v);
                   },
                   [accessor](const PipelineConfig& c) {
                     const auto& ref = accessor(const_cast<PipelineConfig&>(c));
                     if constexpr (std::is_floating_point_v<std::decay_t<decltype(ref)>>) {
                       return fmt_double(ref);
                     } else {
                       return std::to_string(ref);
                     }
                   }});
    };

    path("input_image", "input photograph (8-bit PNG)",
         [](PipelineConfig& c) -> fs::path& { return c.input_image; });
    k.push_back({"depth_source.kind", "file | remote",
                 [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   if (v == "file") {
                     c.depth_source.kind = DepthSource::Kind::kFile;
                   } else if (v == "remote") {
                     c.depth_source.kind = DepthSource::Kind::kRemote;
                   } else {
                     throw Error(ErrorCode::kConfigInvalid, "depth_source.kind: '" + v + "'");
                   }
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.depth_source.kind == DepthSource::Kind::kFile ? "file"
                                                                                      : "remote");
                 }});
    path("depth_source.path", "depth file (16-bit PNG or PFM)",
         [](PipelineConfig& c) -> fs::path& { return c.depth_source.path; });
    k.push_back({"depth_source.format", "auto | png16 | pfm",
                 [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   if (v == "auto") {
                     c.depth_source.format.reset();
                   } else if (v == "png16") {
                     c.depth_source.format = DepthFormat::kPng16;
                   } else if (v == "pfm") {
                     c.depth_source.format = DepthFormat::kPfm;
                   } else {
                     throw Error(ErrorCode::kConfigInvalid, "depth_source.format: '" + v + "'");
                   }
                 },
                 [](const PipelineConfig& c) {
                   if (!c.depth_source.format) return std::string("auto");
                   return std::string(*c.depth_source.format == DepthFormat::kPng16 ? "png16"
                                                                                    : "pfm");
                 }});
    str("background_prompt", "background prompt", &PipelineConfig::background_prompt);
    str("clothes_prompt", "clothes prompt", &PipelineConfig::clothes_prompt);
    num("depth_threshold", "subject threshold on normalized depth, in [0,1]",
        [](PipelineConfig& c) -> double& { return c.depth_threshold; });
    num("morph_kernel", "opening kernel size (odd)",
        [](PipelineConfig& c) -> int& { return c.morph_kernel; });
    k.push_back({"morph_shape", "rect | ellipse",
                 [](PipelineConfig& c, const std::string& v, const fs::path&) {
                   if (v == "rect") {
                     c.morph_shape = ElementShape::kRect;
                   } else if (v == "ellipse") {
                     c.morph_shape = ElementShape::kEllipse;
                   } else {
                     throw Error(ErrorCode::kConfigInvalid, "morph_shape: '" + v + "'");
                   }
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.morph_shape == ElementShape::kRect ? "rect" : "ellipse");
                 }});
    num("face_expand.fa", "face ellipse width factor (>= 1)",
        [](PipelineConfig& c) -> double& { return c.face_expand.fa; });
    num("face_expand.fb", "face ellipse height factor (>= 1)",
        [](PipelineConfig& c) -> double& { return c.face_expand.fb; });
    path("detector.cascade_path", "Haar cascade XML",
         [](PipelineConfig& c) -> fs::path& { return c.detector.cascade_path; });
    num("detector.scale_factor", "scale step between detection passes (> 1)",
        [](PipelineConfig& c) -> double& { return c.detector.params.scale_factor; });
    num("detector.min_neighbors", "minimum raw hits per face",
        [](PipelineConfig& c) -> int& { return c.detector.params.min_neighbors; });
    num("detector.min_size", "smallest face window in pixels",
        [](PipelineConfig& c) -> int& { return c.detector.params.min_size; });
    num("detector.step", "sliding step in pixels (0 = max(1, round(scale)))",
        [](PipelineConfig& c) -> int& { return c.detector.params.step; });
    num("detector.eps", "grouping tolerance",
        [](PipelineConfig& c) -> double& { return c.detector.params.eps; });
    str("backend.base_url", "diffusion backend URL", nullptr);
    k.back().set = [](PipelineConfig& c, const std::string& v, const fs::path&) {
      c.backend.base_url = v;
    };
    k.back().get = [](const PipelineConfig& c) { return c.backend.base_url; };
    num("backend.timeout", "per-request timeout in seconds",
        [](PipelineConfig& c) -> double& { return c.backend.timeout_s; });
    num("backend.retry_on_transport_error", "retries after transport failures",
        [](PipelineConfig& c) -> int& { return c.backend.retry_on_transport_error; });
    num("seeds.background", "background generation seed",
        [](PipelineConfig& c) -> std::uint64_t& { return c.seeds.background; });
    num("seeds.inpaint", "inpainting seed",
        [](PipelineConfig& c) -> std::uint64_t& { return c.seeds.inpaint; });
    num("gen_params.background.width", "generated background width",
        [](PipelineConfig& c) -> int& { return c.gen_params.background_width; });
    num("gen_params.background.height", "generated background height",
        [](PipelineConfig& c) -> int& { return c.gen_params.background_height; });
    num("gen_params.background.num_inference_steps", "background sampling steps",
        [](PipelineConfig& c) -> int& { return c.gen_params.background_steps; });
    num("gen_params.background.guidance_scale", "background guidance scale",
        [](PipelineConfig& c) -> double& { return c.gen_params.background_guidance; });
    num("gen_params.inpaint.num_inference_steps", "inpainting sampling steps",
        [](PipelineConfig& c) -> int& { return c.gen_params.inpaint_steps; });
    num("gen_params.inpaint.guidance_scale", "inpainting guidance scale",
        [](PipelineConfig& c) -> double& { return c.gen_params.inpaint_guidance; });
    num("gen_params.inpaint.strength", "inpainting strength in [0,1]",
        [](PipelineConfig& c) -> double& { return c.gen_params.inpaint_strength; });
    path("output_dir", "run directory",
         [](PipelineConfig& c) -> fs::path& { return c.output_dir; });
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value,
                             const fs::path& base_dir = {}) {
  const ConfigKey* k = find_config_key(key);
  if (k == nullptr) throw Error(ErrorCode::kConfigInvalid, "unknown key '" + key + "'");
  k->set(cfg, value, base_dir);
}

/// Parses `key = value` lines. Later duplicates win. Values run to end of
/// line (no quoting), so prompts may contain spaces and '#'.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kConfigInvalid,
                  "line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) {
      throw Error(ErrorCode::kConfigInvalid, "line " + std::to_string(lineno) + ": empty key");
    }
    out.emplace_back(std::move(key), detail::trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

inline void apply_config_text(PipelineConfig& cfg, std::string_view text,
                              const fs::path& base_dir = {}) {
  for (const auto& [k, v] : parse_key_values(text)) set_config_value(cfg, k, v, base_dir);
}

inline PipelineConfig load_config_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfigInvalid, "cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  PipelineConfig cfg;
  apply_config_text(cfg, ss.str(), fs::absolute(file).parent_path());
  return cfg;
}

inline std::string dump_config(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

inline void validate(const PipelineConfig& c) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfigInvalid, m); };
  if (c.input_image.empty()) fail("input_image is required");
  if (c.depth_source.kind == DepthSource::Kind::kFile && c.depth_source.path.empty()) {
    fail("depth_source.path is required when depth_source.kind = file");
  }
  if (c.background_prompt.empty()) fail("background_prompt must be non-empty");
  if (c.clothes_prompt.empty()) fail("clothes_prompt must be non-empty");
  if (!(c.depth_threshold >= 0.0 && c.depth_threshold <= 1.0)) {
    fail("depth_threshold must be in [0,1]");
  }
  if (c.morph_kernel < 1 || c.morph_kernel % 2 == 0) fail("morph_kernel must be odd and >= 1");
  if (c.face_expand.fa < 1.0 || c.face_expand.fb < 1.0) fail("face_expand factors must be >= 1");
  if (!(c.detector.params.scale_factor > 1.0)) fail("detector.scale_factor must be > 1");
  if (c.detector.params.min_neighbors < 0) fail("detector.min_neighbors must be >= 0");
  if (c.detector.params.step < 0) fail("detector.step must be >= 0");
  if (!(c.backend.timeout_s > 0.0)) fail("backend.timeout must be > 0");
  if (c.backend.retry_on_transport_error < 0) fail("backend.retry_on_transport_error must be >= 0");
  if (!(c.gen_params.inpaint_strength >= 0.0 && c.gen_params.inpaint_strength <= 1.0)) {
    fail("gen_params.inpaint.strength must be in [0,1]");
  }
  if (c.output_dir.empty()) fail("output_dir is required");
}

}  // namespace depthbrush
