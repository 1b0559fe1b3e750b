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

// Viola-Jones cascade evaluation over the OpenCV Haar cascade XML format.
//
// Features are scaled to the window rather than resampling the image: each
// detection scale gets a ScaledCascade whose rectangles are rounded to pixel
// coordinates and whose first rectangle weight is recomputed so the feature
// stays zero-mean at that scale. Stump thresholds are compared against the
// feature response divided by the window's intensity spread, measured on the
// window inset by round(scale) pixels per side (the convention the stock
// cascades were trained under).

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "depthbrush/box.hpp"
#include "depthbrush/error.hpp"
#include "depthbrush/imaging.hpp"

namespace depthbrush {

struct WeightedRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  double weight = 0.0;

  friend bool operator==(const WeightedRect&, const WeightedRect&) = default;
};

struct HaarFeature {
  std::vector<WeightedRect> rects;  // 2 or 3
  bool tilted = false;
};

struct WeakStump {
  HaarFeature feature;
  double threshold = 0.0;
  double left_val = 0.0;
  double right_val = 0.0;
};

struct CascadeStage {
  std::vector<WeakStump> stumps;
  double stage_threshold = 0.0;
};

struct CascadeModel {
  int base_w = 0;
  int base_h = 0;
  std::vector<CascadeStage> stages;

  std::size_t stump_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.stumps.size();
    return n;
  }
};

// ---------------------------------------------------------------------------
// Cascade XML
// ---------------------------------------------------------------------------

namespace detail {

using boost::property_tree::ptree;

inline bool is_meta_key(const std::string& k) {
  return k == "<xmlattr>" || k == "<xmlcomment>";
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <typename T>
T parse_number(std::string_view tok, std::string_view what) {
  T v{};
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::kMalformedCascade,
                "bad number '" + std::string(tok) + "' in " + std::string(what));
  }
  return v;
}

inline std::vector<double> parse_numbers(const std::string& text, std::string_view what) {
  std::vector<double> out;
  for (auto tok : split_ws(text)) out.push_back(parse_number<double>(tok, what));
  return out;
}

inline const ptree& child(const ptree& node, const char* key, std::string_view ctx) {
  auto it = node.find(key);
  if (it == node.not_found()) {
    throw Error(ErrorCode::kMalformedCascade,
                "missing <" + std::string(key) + "> in " + std::string(ctx));
  }
  return it->second;
}

inline std::string text(const ptree& node) { return node.get_value<std::string>(); }

inline std::string trimmed(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Children of an OpenCV sequence node ("<_>" items), skipping comments.
inline std::vector<const ptree*> items(const ptree& node) {
  std::vector<const ptree*> out;
  for (const auto& [k, v] : node) {
    if (k == "_") out.push_back(&v);
  }
  return out;
}

inline bool flag_set(const ptree& node, const char* key) {
  if (auto it = node.find(key); it != node.not_found()) {
    return trimmed(text(it->second)) == "1";
  }
  if (auto attrs = node.get_child_optional("<xmlattr>")) {
    if (auto v = attrs->get_optional<std::string>(key)) return trimmed(*v) == "1";
  }
  return false;
}

inline HaarFeature parse_feature(const ptree& node, int base_w, int base_h) {
  HaarFeature f;
  f.tilted = flag_set(node, "tilted");
  if (f.tilted) throw Error(ErrorCode::kUnsupportedCascade, "tilted features are not supported");
  for (const ptree* r : items(child(node, "rects", "feature"))) {
    const auto v = parse_numbers(text(*r), "rect");
    if (v.size() != 5) throw Error(ErrorCode::kMalformedCascade, "rect needs 5 numbers");
    WeightedRect wr{static_cast<int>(v[0]), static_cast<int>(v[1]), static_cast<int>(v[2]),
                    static_cast<int>(v[3]), v[4]};
    if (wr.x != v[0] || wr.y != v[1] || wr.w != v[2] || wr.h != v[3]) {
      throw Error(ErrorCode::kMalformedCascade, "non-integer rect coordinates");
    }
    if (wr.w < 1 || wr.h < 1 || wr.x < 0 || wr.y < 0 || wr.x + wr.w > base_w ||
        wr.y + wr.h > base_h) {
      throw Error(ErrorCode::kMalformedCascade, "rect outside the base window");
    }
    f.rects.push_back(wr);
  }
  if (f.rects.size() < 2 || f.rects.size() > 3) {
    throw Error(ErrorCode::kMalformedCascade,
                "feature has " + std::to_string(f.rects.size()) + " rects");
  }
  double weighted_area = 0.0;
  for (const auto& r : f.rects) weighted_area += r.weight * r.w * r.h;
  if (std::abs(weighted_area) > 1.0) {
    throw Error(ErrorCode::kMalformedCascade, "feature is not zero-mean");
  }
  return f;
}

inline CascadeModel parse_new_layout(const ptree& c) {
  const std::string stage_type = trimmed(text(child(c, "stageType", "cascade")));
  const std::string feature_type = trimmed(text(child(c, "featureType", "cascade")));
  if (stage_type != "BOOST") {
    throw Error(ErrorCode::kUnsupportedCascade, "stageType " + stage_type);
  }
  if (feature_type != "HAAR") {
    throw Error(ErrorCode::kUnsupportedCascade, "featureType " + feature_type);
  }
  CascadeModel m;
  m.base_w = parse_number<int>(trimmed(text(child(c, "width", "cascade"))), "width");
  m.base_h = parse_number<int>(trimmed(text(child(c, "height", "cascade"))), "height");
  if (m.base_w < 1 || m.base_h < 1) throw Error(ErrorCode::kMalformedCascade, "window size");

  std::vector<HaarFeature> features;
  for (const ptree* f : items(child(c, "features", "cascade"))) {
    features.push_back(parse_feature(*f, m.base_w, m.base_h));
  }
  for (const ptree* s : items(child(c, "stages", "cascade"))) {
    CascadeStage stage;
    stage.stage_threshold =
        parse_number<double>(trimmed(text(child(*s, "stageThreshold", "stage"))), "stage");
    for (const ptree* wc : items(child(*s, "weakClassifiers", "stage"))) {
      const auto nodes = parse_numbers(text(child(*wc, "internalNodes", "weak classifier")),
                                       "internalNodes");
      const auto leaves =
          parse_numbers(text(child(*wc, "leafValues", "weak classifier")), "leafValues");
      if (nodes.size() % 4 != 0 || nodes.empty()) {
        throw Error(ErrorCode::kMalformedCascade, "internalNodes must be groups of 4");
      }
      if (nodes.size() != 4 || leaves.size() != 2) {
        throw Error(ErrorCode::kUnsupportedCascade, "only single-split stumps are supported");
      }
      const int left = static_cast<int>(nodes[0]);
      const int right = static_cast<int>(nodes[1]);
      const int idx = static_cast<int>(nodes[2]);
      if (left > 0 || right > 0 || -left > 1 || -right > 1) {
        throw Error(ErrorCode::kUnsupportedCascade, "stump children must both be leaves");
      }
      if (idx < 0 || idx >= static_cast<int>(features.size())) {
        throw Error(ErrorCode::kMalformedCascade, "feature index out of range");
      }
      stage.stumps.push_back({features[idx], nodes[3], leaves[-left], leaves[-right]});
    }
    if (stage.stumps.empty()) throw Error(ErrorCode::kMalformedCascade, "empty stage");
    m.stages.push_back(std::move(stage));
  }
  return m;
}

inline CascadeModel parse_old_layout(const ptree& c) {
  CascadeModel m;
  const auto size = parse_numbers(text(child(c, "size", "cascade")), "size");
  if (size.size() != 2 || size[0] < 1 || size[1] < 1) {
    throw Error(ErrorCode::kMalformedCascade, "bad <size>");
  }
  m.base_w = static_cast<int>(size[0]);
  m.base_h = static_cast<int>(size[1]);
  for (const ptree* s : items(child(c, "stages", "cascade"))) {
    CascadeStage stage;
    stage.stage_threshold =
        parse_number<double>(trimmed(text(child(*s, "stage_threshold", "stage"))), "stage");
    for (const ptree* tree : items(child(*s, "trees", "stage"))) {
      const auto nodes = items(*tree);
      if (nodes.size() != 1) {
        throw Error(ErrorCode::kUnsupportedCascade, "only single-node trees are supported");
      }
      const ptree& n = *nodes.front();
      if (n.find("left_node") != n.not_found() || n.find("right_node") != n.not_found()) {
        throw Error(ErrorCode::kUnsupportedCascade, "only single-node trees are supported");
      }
      WeakStump st;
      st.feature = parse_feature(child(n, "feature", "tree node"), m.base_w, m.base_h);
      st.threshold = parse_number<double>(trimmed(text(child(n, "threshold", "node"))), "node");
      st.left_val = parse_number<double>(trimmed(text(child(n, "left_val", "node"))), "node");
      st.right_val = parse_number<double>(trimmed(text(child(n, "right_val", "node"))), "node");
      stage.stumps.push_back(std::move(st));
    }
    if (stage.stumps.empty()) throw Error(ErrorCode::kMalformedCascade, "empty stage");
    m.stages.push_back(std::move(stage));
  }
  return m;
}

}  // namespace detail

/// Parses the OpenCV cascade XML, either the current `stageType BOOST`
/// layout or the older `opencv-haar-classifier` tree layout.
inline CascadeModel parse_cascade(std::string_view xml) {
  detail::ptree root;
  try {
    std::istringstream in{std::string(xml)};
    boost::property_tree::read_xml(in, root);
  } catch (const boost::property_tree::xml_parser_error& e) {
    throw Error(ErrorCode::kMalformedCascade, e.what());
  }
  auto storage = root.get_child_optional("opencv_storage");
  if (!storage) throw Error(ErrorCode::kMalformedCascade, "missing <opencv_storage>");
  for (const auto& [key, node] : *storage) {
    if (detail::is_meta_key(key)) continue;
    CascadeModel m;
    if (node.find("stageType") != node.not_found()) {
      m = detail::parse_new_layout(node);
    } else if (node.find("size") != node.not_found()) {
      m = detail::parse_old_layout(node);
    } else {
      continue;
    }
    if (m.stages.empty()) throw Error(ErrorCode::kMalformedCascade, "cascade has no stages");
    return m;
  }
  throw Error(ErrorCode::kMalformedCascade, "no cascade element found");
}

inline CascadeModel parse_cascade(std::span<const std::uint8_t> bytes) {
  return parse_cascade(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

// ---------------------------------------------------------------------------
// Integral images
// ---------------------------------------------------------------------------

// (w+1) x (h+1) summed-area tables; row 0 and column 0 are zero.
struct IntegralPair {
  int width = 0;   // image width
  int height = 0;  // image height
  std::vector<std::int64_t> sum;
  std::vector<std::int64_t> sqsum;

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * (width + 1) + x;
  }
  std::int64_t S(int x, int y) const { return sum[index(x, y)]; }
  std::int64_t Q(int x, int y) const { return sqsum[index(x, y)]; }
};

inline IntegralPair integral_images(const GrayImage& gray) {
  IntegralPair ii;
  ii.width = gray.width;
  ii.height = gray.height;
  const std::size_t n = static_cast<std::size_t>(gray.width + 1) * (gray.height + 1);
  ii.sum.assign(n, 0);
  ii.sqsum.assign(n, 0);
  for (int y = 0; y < gray.height; ++y) {
    std::int64_t row = 0, row_sq = 0;
    for (int x = 0; x < gray.width; ++x) {
      const std::int64_t p = gray.at(x, y);
      row += p;
      row_sq += p * p;
      ii.sum[ii.index(x + 1, y + 1)] = ii.sum[ii.index(x + 1, y)] + row;
      ii.sqsum[ii.index(x + 1, y + 1)] = ii.sqsum[ii.index(x + 1, y)] + row_sq;
    }
  }
  return ii;
}

inline std::int64_t rect_sum(std::span<const std::int64_t> table, int stride, int x, int y,
                             int w, int h) {
  auto at = [&](int cx, int cy) { return table[static_cast<std::size_t>(cy) * stride + cx]; };
  return at(x + w, y + h) - at(x, y + h) - at(x + w, y) + at(x, y);
}

inline std::int64_t rect_sum(const IntegralPair& ii, int x, int y, int w, int h) {
  return rect_sum(ii.sum, ii.width + 1, x, y, w, h);
}

inline std::int64_t rect_sqsum(const IntegralPair& ii, int x, int y, int w, int h) {
  return rect_sum(ii.sqsum, ii.width + 1, x, y, w, h);
}

// ---------------------------------------------------------------------------
// Window evaluation
// ---------------------------------------------------------------------------

inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

struct ScaledRect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  double weight = 0.0;
  int area() const { return w * h; }
};

struct ScaledStump {
  std::array<ScaledRect, 3> rects{};
  int rect_count = 0;
  // First-rect weight as the exact quotient first_weight_num / rects[0].area().
  double first_weight_num = 0.0;
  double threshold = 0.0;
  double left_val = 0.0;
  double right_val = 0.0;

  // Sum of weight x scaled area after recompensation.
  double weighted_area() const {
    double rest = 0.0;
    for (int k = 1; k < rect_count; ++k) rest += rects[k].weight * rects[k].area();
    return first_weight_num + rest;
  }
};

struct ScaledStage {
  std::vector<ScaledStump> stumps;
  double stage_threshold = 0.0;
};

struct ScaledCascade {
  double scale = 1.0;
  int win_w = 0;
  int win_h = 0;
  // Footprint: max of the window and every scaled rect's far edge.
  int extent_w = 0;
  int extent_h = 0;
  int inset = 0;
  std::vector<ScaledStage> stages;
};

inline ScaledCascade scale_cascade(const CascadeModel& model, double scale) {
  ScaledCascade sc;
  sc.scale = scale;
  sc.win_w = round_half_up(model.base_w * scale);
  sc.win_h = round_half_up(model.base_h * scale);
  sc.extent_w = sc.win_w;
  sc.extent_h = sc.win_h;
  sc.inset = round_half_up(scale);
  sc.stages.reserve(model.stages.size());
  for (const auto& stage : model.stages) {
    ScaledStage ss;
    ss.stage_threshold = stage.stage_threshold;
    ss.stumps.reserve(stage.stumps.size());
    for (const auto& stump : stage.stumps) {
      ScaledStump st;
      st.threshold = stump.threshold;
      st.left_val = stump.left_val;
      st.right_val = stump.right_val;
      st.rect_count = static_cast<int>(stump.feature.rects.size());
      double rest = 0.0;
      for (int k = 0; k < st.rect_count; ++k) {
        const WeightedRect& r = stump.feature.rects[k];
        ScaledRect& t = st.rects[k];
        t.x = round_half_up(r.x * scale);
        t.y = round_half_up(r.y * scale);
        t.w = std::max(1, round_half_up(r.w * scale));
        t.h = std::max(1, round_half_up(r.h * scale));
        t.weight = r.weight;
        if (k > 0) rest += t.weight * t.area();
        sc.extent_w = std::max(sc.extent_w, t.x + t.w);
        sc.extent_h = std::max(sc.extent_h, t.y + t.h);
      }
      st.first_weight_num = -rest;
      st.rects[0].weight = st.first_weight_num / st.rects[0].area();
      ss.stumps.push_back(st);
    }
    sc.stages.push_back(std::move(ss));
  }
  return sc;
}

// Spread term: sqrt(A*Q - S^2) over the inset window, or 1 when the window
// has no variance (or is too small to inset).
inline double variance_norm(std::int64_t area, std::int64_t s, std::int64_t q) {
  if (area <= 0) return 1.0;
  const __int128 radicand = static_cast<__int128>(area) * q - static_cast<__int128>(s) * s;
  if (radicand <= 0) return 1.0;
  return std::sqrt(static_cast<double>(radicand));
}

inline bool stump_takes_left(double feature, double threshold, double norm) {
  return feature < threshold * norm;
}

struct WindowEvaluation {
  bool accepted = false;
  double norm = 1.0;
  // Sums of every stage evaluated, up to and including the first failure.
  std::vector<double> stage_sums;
};

inline bool window_fits(const ScaledCascade& sc, int img_w, int img_h, int x, int y) {
  return x >= 0 && y >= 0 && x + sc.extent_w <= img_w && y + sc.extent_h <= img_h;
}

inline WindowEvaluation evaluate_window_detailed(const ScaledCascade& sc, const IntegralPair& ii,
                                                 int x, int y, bool record_sums = true) {
  if (!window_fits(sc, ii.width, ii.height, x, y)) {
    throw Error(ErrorCode::kWindowOutOfBounds,
                "window " + std::to_string(sc.extent_w) + "x" + std::to_string(sc.extent_h) +
                    " at (" + std::to_string(x) + "," + std::to_string(y) + ")");
  }
  WindowEvaluation ev;
  const int vw = sc.win_w - 2 * sc.inset;
  const int vh = sc.win_h - 2 * sc.inset;
  if (vw > 0 && vh > 0) {
    const int vx = x + sc.inset, vy = y + sc.inset;
    ev.norm = variance_norm(static_cast<std::int64_t>(vw) * vh, rect_sum(ii, vx, vy, vw, vh),
                            rect_sqsum(ii, vx, vy, vw, vh));
  }
  for (const ScaledStage& stage : sc.stages) {
    double stage_sum = 0.0;
    for (const ScaledStump& st : stage.stumps) {
      double f = 0.0;
      for (int k = 0; k < st.rect_count; ++k) {
        const ScaledRect& r = st.rects[k];
        f += r.weight * static_cast<double>(rect_sum(ii, x + r.x, y + r.y, r.w, r.h));
      }
      stage_sum += stump_takes_left(f, st.threshold, ev.norm) ? st.left_val : st.right_val;
    }
    if (record_sums) ev.stage_sums.push_back(stage_sum);
    if (stage_sum < stage.stage_threshold) return ev;
  }
  ev.accepted = true;
  return ev;
}

/// True iff the window at (x, y) with the given scale passes every stage.
inline bool evaluate_window(const CascadeModel& model, const IntegralPair& ii, int x, int y,
                            double scale) {
  if (scale < 1.0) throw Error(ErrorCode::kConfigInvalid, "scale must be >= 1");
  return evaluate_window_detailed(scale_cascade(model, scale), ii, x, y, false).accepted;
}

// ---------------------------------------------------------------------------
// Detection and grouping
// ---------------------------------------------------------------------------

inline std::vector<FaceBox> group_rectangles(std::span<const FaceBox> raw, int min_neighbors,
                                             double eps = 0.2) {
  const std::size_t n = raw.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  auto similar = [eps](const FaceBox& a, const FaceBox& b) {
    const double delta = eps * 0.5 * (std::min(a.w, b.w) + std::min(a.h, b.h));
    return std::abs(a.x - b.x) <= delta && std::abs(a.y - b.y) <= delta &&
           std::abs(a.x + a.w - b.x - b.w) <= delta && std::abs(a.y + a.h - b.y - b.h) <= delta;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (similar(raw[i], raw[j])) parent[find(i)] = find(j);
    }
  }
  struct Acc {
    double x = 0, y = 0, w = 0, h = 0;
    int count = 0;
  };
  std::vector<Acc> acc(n);
  for (std::size_t i = 0; i < n; ++i) {
    Acc& a = acc[find(i)];
    a.x += raw[i].x;
    a.y += raw[i].y;
    a.w += raw[i].w;
    a.h += raw[i].h;
    ++a.count;
  }
  const int needed = std::max(1, min_neighbors);
  std::vector<FaceBox> out;
  for (const Acc& a : acc) {
    if (a.count == 0 || a.count < needed) continue;
    out.push_back({round_half_up(a.x / a.count), round_half_up(a.y / a.count),
                   round_half_up(a.w / a.count), round_half_up(a.h / a.count)});
  }
  std::sort(out.begin(), out.end(), face_box_less);
  return out;
}

struct DetectorParams {
  double scale_factor = 1.1;
  int min_neighbors = 3;
  int min_size = 30;
  int step = 0;  // 0: max(1, round(scale))
  double eps = 0.2;
};

inline std::vector<FaceBox> detect_raw(const CascadeModel& model, const GrayImage& gray,
                                       const DetectorParams& p) {
  if (!(p.scale_factor > 1.0)) {
    throw Error(ErrorCode::kConfigInvalid, "scale_factor must be > 1");
  }
  const IntegralPair ii = integral_images(gray);
  double scale = std::max({1.0, static_cast<double>(p.min_size) / model.base_w,
                           static_cast<double>(p.min_size) / model.base_h});
  std::vector<FaceBox> raw;
  while (round_half_up(model.base_w * scale) <= gray.width &&
         round_half_up(model.base_h * scale) <= gray.height) {
    const ScaledCascade sc = scale_cascade(model, scale);
    const int step = p.step > 0 ? p.step : std::max(1, round_half_up(scale));
    for (int y = 0; y + sc.extent_h <= gray.height; y += step) {
      for (int x = 0; x + sc.extent_w <= gray.width; x += step) {
        if (evaluate_window_detailed(sc, ii, x, y, false).accepted) {
          raw.push_back({x, y, sc.win_w, sc.win_h});
        }
      }
    }
    scale *= p.scale_factor;
  }
  std::sort(raw.begin(), raw.end(), face_box_less);
  return raw;
}

/// Multi-scale sliding-window detection followed by rectangle grouping.
/// Output is sorted by (y, x, w).
inline std::vector<FaceBox> detect_faces(const CascadeModel& model, const GrayImage& gray,
                                         const DetectorParams& p = {}) {
  const auto raw = detect_raw(model, gray, p);
  return group_rectangles(raw, p.min_neighbors, p.eps);
}

}  // namespace depthbrush
