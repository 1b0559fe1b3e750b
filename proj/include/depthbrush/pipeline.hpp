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

// End-to-end run: depth -> masks -> background replacement -> inpainting.
//
// A run directory holds one file per stage plus manifest.json (stage order
// and SHA-256 of each file) and run.log. A failed run keeps the files of the
// stages that completed and adds failure.json.

#pragma once

#include <array>
#include <fstream>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "depthbrush/composite.hpp"
#include "depthbrush/config.hpp"
#include "depthbrush/depth.hpp"
#include "depthbrush/encoding.hpp"
#include "depthbrush/error.hpp"
#include "depthbrush/facedetect.hpp"
#include "depthbrush/genclient.hpp"
#include "depthbrush/imaging.hpp"
#include "depthbrush/maskgen.hpp"

namespace depthbrush {

struct StageFile {
  std::string_view name;
  std::string_view file;
};

// Execution order. Face detection needs only the input image, but its record
// lands after subject_mask because inpaint_mask consumes both.
inline constexpr std::array<StageFile, 8> kStages = {{
    {"depth_raw", "depth_raw.pfm"},
    {"depth_norm", "depth_norm.png"},
    {"subject_mask", "subject_mask.png"},
    {"faces", "faces.json"},
    {"inpaint_mask", "inpaint_mask.png"},
    {"background", "background.png"},
    {"composited", "composited.png"},
    {"final", "final.png"},
}};

inline std::optional<StageFile> find_stage(std::string_view name) {
  for (const auto& s : kStages) {
    if (s.name == name) return s;
  }
  return std::nullopt;
}

struct StageRecord {
  std::string name;
  fs::path path;
  std::string content_hash;  // SHA-256 hex of the file bytes
};

struct StageArtifacts {
  fs::path run_dir;
  std::vector<StageRecord> stages;

  const StageRecord* find(std::string_view name) const {
    for (const auto& s : stages) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }
  bool complete() const { return stages.size() == kStages.size(); }
};

struct MaskSettings {
  double threshold = 0.6;
  int kernel = 5;
  ElementShape shape = ElementShape::kRect;
  FaceExpand expand;

  StructuringElement element() const { return StructuringElement(kernel, shape); }
};

struct GenerationSettings {
  std::string background_prompt;
  std::string clothes_prompt;
  Seeds seeds;
  GenParams params;
};

struct RunSettings {
  MaskSettings mask;
  GenerationSettings gen;
};

inline RunSettings run_settings(const PipelineConfig& c) {
  RunSettings s;
  s.mask = {c.depth_threshold, c.morph_kernel, c.morph_shape, c.face_expand};
  s.gen = {c.background_prompt, c.clothes_prompt, c.seeds, c.gen_params};
  return s;
}

struct MaskPair {
  BinaryMask subject;
  BinaryMask inpaint;
};

/// Both masks at threshold t, with no backend involvement.
inline MaskPair preview_mask(const RasterImage& image, const DepthMap& depth_norm, double t,
                             std::span<const FaceBox> faces, const MaskSettings& s) {
  if (depth_norm.width != image.width || depth_norm.height != image.height) {
    throw Error(ErrorCode::kDimMismatch, "depth " + std::to_string(depth_norm.width) + "x" +
                                             std::to_string(depth_norm.height) + " vs image " +
                                             std::to_string(image.width) + "x" +
                                             std::to_string(image.height));
  }
  MaskPair out;
  out.subject = threshold_mask(depth_norm, t);
  out.inpaint = build_inpaint_mask(out.subject, faces, s.expand, s.element(), image.width,
                                   image.height);
  return out;
}

inline Json faces_to_json(std::span<const FaceBox> faces) {
  Json arr = Json::array();
  for (const auto& f : faces) arr.push_back({{"x", f.x}, {"y", f.y}, {"w", f.w}, {"h", f.h}});
  return arr;
}

inline std::vector<FaceBox> faces_from_json(const Json& j) {
  std::vector<FaceBox> out;
  if (!j.is_array()) throw Error(ErrorCode::kBadPayload, "faces must be a JSON array");
  for (const auto& f : j) {
    out.push_back({detail::json_field<int>(f, "x"), detail::json_field<int>(f, "y"),
                   detail::json_field<int>(f, "w"), detail::json_field<int>(f, "h")});
  }
  return out;
}

inline std::vector<std::uint8_t> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot read " + p.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

/// Writes via a sibling temp file and rename, so readers never see a
/// partially written artifact.
inline void write_file_atomic(const fs::path& p, std::span<const std::uint8_t> bytes) {
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename " + tmp.string() + ": " + ec.message());
}

inline void write_file_atomic(const fs::path& p, std::string_view text) {
  write_file_atomic(p, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

/// Owns one run directory. Thread-safe for log(); stage records are appended
/// from the orchestrating thread only.
class RunWriter {
 public:
  explicit RunWriter(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error(ErrorCode::kIo, "cannot create " + dir_.string() + ": " + ec.message());
    for (const auto& s : kStages) fs::remove(dir_ / s.file, ec);
    for (const char* f : {"manifest.json", "failure.json"}) fs::remove(dir_ / f, ec);
    log_.open(dir_ / "run.log", std::ios::trunc);
    if (!log_) throw Error(ErrorCode::kIo, "cannot open run.log in " + dir_.string());
    artifacts_.run_dir = dir_;
  }

  const fs::path& dir() const { return dir_; }
  const StageArtifacts& artifacts() const { return artifacts_; }

  void log(const std::string& line) {
    std::lock_guard lock(mu_);
    log_ << line << '\n';
    log_.flush();
  }

  const StageRecord& record(std::string_view name, std::span<const std::uint8_t> bytes) {
    const auto stage = find_stage(name);
    if (!stage) throw Error(ErrorCode::kIo, "unknown stage " + std::string(name));
    const fs::path p = dir_ / stage->file;
    write_file_atomic(p, bytes);
    artifacts_.stages.push_back({std::string(name), p, sha256_hex(bytes)});
    const auto& rec = artifacts_.stages.back();
    log("stage " + rec.name + " done " + rec.content_hash);
    return rec;
  }

  const StageRecord& record(std::string_view name, std::string_view text) {
    return record(name,
                  std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

  void write_manifest(const Json& settings) {
    Json stages = Json::array();
    for (const auto& s : artifacts_.stages) {
      stages.push_back(
          {{"name", s.name}, {"file", s.path.filename().string()}, {"sha256", s.content_hash}});
    }
    write_file_atomic(dir_ / "manifest.json",
                      Json{{"stages", stages}, {"settings", settings}}.dump(2) + "\n");
  }

  void write_failure(const Error& e) {
    Json done = Json::array();
    for (const auto& s : artifacts_.stages) done.push_back(s.name);
    const Json j{{"stage", e.stage()},
                 {"code", std::string(error_code_name(e.code()))},
                 {"message", e.detail()},
                 {"completed", done}};
    log("failed at " + e.stage() + ": " + e.what());
    try {
      write_file_atomic(dir_ / "failure.json", j.dump(2) + "\n");
    } catch (const Error&) {
      // The original error is more useful than a failure to record it.
    }
  }

 private:
  fs::path dir_;
  std::mutex mu_;
  std::ofstream log_;
  StageArtifacts artifacts_;
};

namespace detail {

// Runs fn; any error leaving it is tagged with `stage`. Non-library
// exceptions (filesystem, allocation) become Io.
template <typename Fn>
auto in_stage(std::string_view stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (Error& e) {
    if (e.stage().empty()) e.set_stage(std::string(stage));
    throw;
  } catch (const std::exception& e) {
    Error err(ErrorCode::kIo, e.what());
    err.set_stage(std::string(stage));
    throw err;
  }
}

inline Json settings_json(const RunSettings& s) {
  return Json{{"depth_threshold", s.mask.threshold},
              {"morph_kernel", s.mask.kernel},
              {"morph_shape", s.mask.shape == ElementShape::kRect ? "rect" : "ellipse"},
              {"face_expand", {{"fa", s.mask.expand.fa}, {"fb", s.mask.expand.fb}}},
              {"background_prompt", s.gen.background_prompt},
              {"clothes_prompt", s.gen.clothes_prompt},
              {"seeds", {{"background", s.gen.seeds.background}, {"inpaint", s.gen.seeds.inpaint}}}};
}

}  // namespace detail

using FaceSource = std::function<std::vector<FaceBox>()>;

/// Stages from depth_raw onward, given the input image and its raw depth.
/// `faces` is called once; the background request is in flight while it
/// runs. Shared by run_pipeline and the service's generate jobs.
inline StageArtifacts run_stages(const RasterImage& image, const DepthMap& depth_raw,
                                 const FaceSource& faces_fn, const RunSettings& s,
                                 const BackendClient& client, RunWriter& w) {
  try {
    detail::in_stage("depth_raw", [&] {
      if (depth_raw.width != image.width || depth_raw.height != image.height) {
        throw Error(ErrorCode::kDimMismatch,
                    "depth " + std::to_string(depth_raw.width) + "x" +
                        std::to_string(depth_raw.height) + " vs image " +
                        std::to_string(image.width) + "x" + std::to_string(image.height));
      }
      w.record("depth_raw", encode_pfm(depth_raw));
    });

    const DepthMap depth_norm = detail::in_stage("depth_norm", [&] {
      DepthMap d = normalize_depth(depth_raw);
      w.record("depth_norm", encode_depth_png16(d));
      return d;
    });

    const BinaryMask subject = detail::in_stage("subject_mask", [&] {
      BinaryMask m = threshold_mask(depth_norm, s.mask.threshold);
      w.record("subject_mask", encode_mask_png(m));
      return m;
    });

    GenerationRequest bg_req;
    bg_req.prompt = s.gen.background_prompt;
    bg_req.width = s.gen.params.background_width;
    bg_req.height = s.gen.params.background_height;
    bg_req.num_inference_steps = s.gen.params.background_steps;
    bg_req.guidance_scale = s.gen.params.background_guidance;
    bg_req.seed = s.gen.seeds.background;
    detail::in_stage("background", [&] { validate(bg_req); });
    w.log("background request issued");
    auto bg_future = std::async(std::launch::async, [&client, bg_req] {
      return client.txt2img(bg_req);
    });

    const std::vector<FaceBox> faces = detail::in_stage("faces", [&] {
      std::vector<FaceBox> f = faces_fn();
      w.record("faces", faces_to_json(f).dump() + "\n");
      return f;
    });

    const BinaryMask inpaint_mask = detail::in_stage("inpaint_mask", [&] {
      BinaryMask m = build_inpaint_mask(subject, faces, s.mask.expand, s.mask.element(),
                                        image.width, image.height);
      w.record("inpaint_mask", encode_mask_png(m));
      return m;
    });

    const RasterImage background = detail::in_stage("background", [&] {
      RasterImage generated = bg_future.get();
      RasterImage resized = resize_bilinear(generated, image.width, image.height);
      w.record("background", encode_png(resized));
      return resized;
    });

    const RasterImage composited = detail::in_stage("composited", [&] {
      RasterImage c = replace_background(image, background, subject);
      w.record("composited", encode_png(c));
      return c;
    });

    detail::in_stage("final", [&] {
      InpaintRequest req;
      req.prompt = s.gen.clothes_prompt;
      req.image = composited;
      req.mask = inpaint_mask;
      req.guidance_scale = s.gen.params.inpaint_guidance;
      req.num_inference_steps = s.gen.params.inpaint_steps;
      req.strength = s.gen.params.inpaint_strength;
      req.seed = s.gen.seeds.inpaint;
      w.record("final", encode_png(client.inpaint(req)));
    });

    detail::in_stage("manifest", [&] { w.write_manifest(detail::settings_json(s)); });
    w.log("run complete");
    return w.artifacts();
  } catch (const Error& e) {
    w.write_failure(e);
    throw;
  }
}

/// Depth for the configured source. Remote estimation falls back to the
/// configured file when the backend rejects the request (e.g. no /v1/depth).
inline DepthMap acquire_depth(const PipelineConfig& cfg, const RasterImage& image,
                              const BackendClient& client) {
  auto from_file = [&] {
    const auto bytes = read_file(cfg.depth_source.path);
    return cfg.depth_source.format ? load_depth(bytes, *cfg.depth_source.format)
                                   : load_depth(bytes);
  };
  if (cfg.depth_source.kind == DepthSource::Kind::kFile) return from_file();
  try {
    return client.estimate_depth_remote(image);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kBackendRejected || cfg.depth_source.path.empty()) throw;
    return from_file();
  }
}

inline FaceSource cascade_face_source(const fs::path& cascade_path, const RasterImage& image,
                                      const DetectorParams& params) {
  return [cascade_path, &image, params] {
    const CascadeModel model = parse_cascade(read_file(cascade_path));
    return detect_faces(model, to_grayscale(image), params);
  };
}

/// Full batch run. Every thrown Error carries the failing stage name
/// ("config" and "input" for failures before the first stage).
inline StageArtifacts run_pipeline(const PipelineConfig& cfg,
                                   BackendClient::AttemptSink sink = {}) {
  detail::in_stage("config", [&] { validate(cfg); });
  RunWriter w = detail::in_stage("config", [&] { return RunWriter(cfg.output_dir); });
  auto log_sink = [&w, sink](const AttemptRecord& r) {
    w.log("backend " + r.path + " attempt " + std::to_string(r.attempt) + ": " + r.outcome);
    if (sink) sink(r);
  };
  try {
    const BackendClient client =
        detail::in_stage("config", [&] { return BackendClient(cfg.backend, log_sink); });
    const RasterImage image =
        detail::in_stage("input", [&] { return decode_png(read_file(cfg.input_image)); });
    const DepthMap raw =
        detail::in_stage("depth_raw", [&] { return acquire_depth(cfg, image, client); });
    return run_stages(image, raw,
                      cascade_face_source(cfg.detector.cascade_path, image, cfg.detector.params),
                      run_settings(cfg), client, w);
  } catch (const Error& e) {
    if (!fs::exists(w.dir() / "failure.json")) w.write_failure(e);
    throw;
  }
}

}  // namespace depthbrush
