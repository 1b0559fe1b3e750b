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

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "depthbrush/box.hpp"
#include "depthbrush/config.hpp"
#include "depthbrush/depth.hpp"
#include "depthbrush/error.hpp"
#include "depthbrush/imaging.hpp"
#include "depthbrush/maskgen.hpp"

#ifndef DEPTHBRUSH_TEST_DATA_DIR
#error "DEPTHBRUSH_TEST_DATA_DIR must point at tests/data"
#endif

namespace fixtures {

namespace db = depthbrush;
namespace fs = std::filesystem;

// Code of the depthbrush::Error thrown by fn, or nullopt if none is.
inline std::optional<db::ErrorCode> code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const db::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline fs::path data(const std::string& name) { return fs::path(DEPTHBRUSH_TEST_DATA_DIR) / name; }

inline fs::path cascade() { return db::default_cascade_path(); }

inline std::vector<std::uint8_t> bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline db::FaceBox portrait_face() {
  const auto j = nlohmann::json::parse(text(data("portrait_face.json")));
  return {j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(), j.at("h").get<int>()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "depthbrush-test-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

// Portrait run against `backend_url`, writing into `out`.
inline db::PipelineConfig portrait_config(const std::string& backend_url, const fs::path& out,
                                          const std::string& bg = "pirate ship",
                                          const std::string& clothes = "pirate clothes",
                                          double t = 0.6) {
  db::PipelineConfig c;
  c.input_image = data("portrait.png");
  c.depth_source.path = data("portrait_depth.png");
  c.background_prompt = bg;
  c.clothes_prompt = clothes;
  c.depth_threshold = t;
  c.seeds = {1, 2};
  c.backend.base_url = backend_url;
  c.backend.timeout_s = 30.0;
  c.output_dir = out;
  return c;
}

inline db::RasterImage random_image(std::mt19937_64& rng, int w, int h, int c = 3) {
  db::RasterImage img(w, h, c);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

inline db::GrayImage random_gray(std::mt19937_64& rng, int w, int h) {
  db::GrayImage img(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

inline db::BinaryMask random_mask(std::mt19937_64& rng, int w, int h, double p = 0.5) {
  db::BinaryMask m(w, h);
  std::bernoulli_distribution d(p);
  for (auto& v : m.bits) v = d(rng) ? 1 : 0;
  return m;
}

// Normalized map whose values include exact ties with the `ties` list.
inline db::DepthMap random_depth(std::mt19937_64& rng, int w, int h,
                                 const std::vector<double>& ties = {}) {
  db::DepthMap d;
  d.width = w;
  d.height = h;
  d.normalized = true;
  d.raw_max = 1.0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, 9);
  d.values.resize(static_cast<std::size_t>(w) * h);
  for (auto& v : d.values) {
    v = (!ties.empty() && pick(rng) == 0) ? ties[rng() % ties.size()] : u(rng);
  }
  return d;
}

}  // namespace fixtures
