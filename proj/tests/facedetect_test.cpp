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

#include <gtest/gtest.h>

#include <random>
#include <string>

#include "depthbrush/facedetect.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace db = depthbrush;
using fixtures::code_of;

namespace {

// One stage, one stump on a 4x4 window. The feature is left half minus
// right half (whole window at -1, left half at +2).
std::string tiny_cascade(const std::string& threshold = "0.", const std::string& stage = "0.5",
                         const std::string& nodes = "0 -1 0 ", const std::string& extra = "") {
  return R"(<?xml version="1.0"?>
<opencv_storage>
<cascade type_id="opencv-cascade-classifier"><stageType>BOOST</stageType>
  <featureType>HAAR</featureType><height>4</height><width>4</width>
  <stageNum>1</stageNum>
  <stages><_><maxWeakCount>1</maxWeakCount><stageThreshold>)" +
         stage + R"(</stageThreshold>
    <weakClassifiers><_><internalNodes>)" +
         nodes + threshold + R"(</internalNodes>
      <leafValues>-1. 1.</leafValues></_></weakClassifiers></_></stages>
  <features><_><rects><_>0 0 4 4 -1.</_><_>0 0 2 4 2.</_></rects>)" +
         extra + R"(</_></features>
</cascade>
</opencv_storage>
)";
}

const char* kOldLayout = R"(<?xml version="1.0"?>
<opencv_storage>
<tiny type_id="opencv-haar-classifier">
  <size>4 4</size>
  <stages>
    <_>
      <trees>
        <_>
          <_>
            <feature><rects><_>0 0 4 4 -1.</_><_>0 0 2 4 2.</_></rects><tilted>0</tilted></feature>
            <threshold>0.</threshold><left_val>-1.</left_val><right_val>1.</right_val></_></_></trees>
      <stage_threshold>0.5</stage_threshold><parent>-1</parent><next>-1</next></_>
  </stages>
</tiny>
</opencv_storage>
)";

db::GrayImage halves(std::uint8_t left, std::uint8_t right) {
  db::GrayImage g(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) g.data[y * 4 + x] = x < 2 ? left : right;
  }
  return g;
}

const db::CascadeModel& stock() {
  static const db::CascadeModel m =
      db::parse_cascade(fixtures::text(fixtures::cascade()));
  return m;
}

TEST(ParseCascade, TinyNewLayout) {
  const auto m = db::parse_cascade(tiny_cascade("0.25"));
  EXPECT_EQ(m.base_w, 4);
  EXPECT_EQ(m.base_h, 4);
  ASSERT_EQ(m.stages.size(), 1u);
  EXPECT_EQ(m.stages[0].stage_threshold, 0.5);
  ASSERT_EQ(m.stages[0].stumps.size(), 1u);
  const auto& st = m.stages[0].stumps[0];
  EXPECT_EQ(st.threshold, 0.25);
  EXPECT_EQ(st.left_val, -1.0);
  EXPECT_EQ(st.right_val, 1.0);
  ASSERT_EQ(st.feature.rects.size(), 2u);
  EXPECT_EQ(st.feature.rects[1], (db::WeightedRect{0, 0, 2, 4, 2.0}));
}

TEST(ParseCascade, OldLayoutMatchesNewLayout) {
  const auto a = db::parse_cascade(std::string(kOldLayout));
  const auto b = db::parse_cascade(tiny_cascade());
  EXPECT_EQ(a.base_w, b.base_w);
  ASSERT_EQ(a.stages.size(), 1u);
  EXPECT_EQ(a.stages[0].stage_threshold, b.stages[0].stage_threshold);
  EXPECT_EQ(a.stages[0].stumps[0].feature.rects, b.stages[0].stumps[0].feature.rects);
  EXPECT_EQ(a.stages[0].stumps[0].left_val, b.stages[0].stumps[0].left_val);
}

TEST(ParseCascade, Unsupported) {
  EXPECT_EQ(code_of([] { db::parse_cascade(tiny_cascade("0.", "0.5", "0 -1 0 ", "<tilted>1</tilted>")); }),
            db::ErrorCode::kUnsupportedCascade);
  EXPECT_EQ(code_of([] { db::parse_cascade(tiny_cascade("0. 1 -2 0 0.", "0.5", "0 1 0 ")); }),
            db::ErrorCode::kUnsupportedCascade);
  std::string lbp = tiny_cascade();
  lbp.replace(lbp.find("HAAR"), 4, "LBP");
  EXPECT_EQ(code_of([&] { db::parse_cascade(lbp); }), db::ErrorCode::kUnsupportedCascade);
}

TEST(ParseCascade, Malformed) {
  EXPECT_EQ(code_of([] { db::parse_cascade(std::string("<opencv_storage><cascade>")); }),
            db::ErrorCode::kMalformedCascade);
  EXPECT_EQ(code_of([] { db::parse_cascade(std::string("<other/>")); }),
            db::ErrorCode::kMalformedCascade);
  std::string outside = tiny_cascade();
  outside.replace(outside.find("0 0 2 4 2."), 10, "3 0 2 4 2.");
  EXPECT_EQ(code_of([&] { db::parse_cascade(outside); }), db::ErrorCode::kMalformedCascade);
  std::string not_zero_mean = tiny_cascade();
  not_zero_mean.replace(not_zero_mean.find("0 0 2 4 2."), 10, "0 0 2 4 3.");
  EXPECT_EQ(code_of([&] { db::parse_cascade(not_zero_mean); }), db::ErrorCode::kMalformedCascade);
  std::string bad_number = tiny_cascade("zero");
  EXPECT_EQ(code_of([&] { db::parse_cascade(bad_number); }), db::ErrorCode::kMalformedCascade);
  EXPECT_EQ(code_of([] { db::parse_cascade(tiny_cascade("0.", "0.5", "0 -1 7 ")); }),
            db::ErrorCode::kMalformedCascade);
}

TEST(ParseCascade, StockCascadeMatchesIndependentDump) {
  const auto dump = nlohmann::json::parse(fixtures::text(fixtures::data("cascade_dump.json")));
  const auto& m = stock();
  EXPECT_EQ(m.base_w, dump["width"].get<int>());
  EXPECT_EQ(m.base_h, dump["height"].get<int>());
  ASSERT_EQ(m.stages.size(), dump["stage_count"].get<std::size_t>());
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    EXPECT_EQ(m.stages[i].stumps.size(), dump["stumps_per_stage"][i].get<std::size_t>());
    EXPECT_EQ(m.stages[i].stage_threshold, dump["stage_thresholds"][i].get<double>());
  }
  EXPECT_EQ(m.stump_count(), dump["feature_count"].get<std::size_t>());
}

TEST(IntegralImages, SmallCases) {
  db::GrayImage one(1, 1, 5);
  const auto a = db::integral_images(one);
  EXPECT_EQ(a.S(1, 1), 5);
  EXPECT_EQ(a.Q(1, 1), 25);
  EXPECT_EQ(a.S(0, 1), 0);
  db::GrayImage four(2, 2);
  four.data = {1, 2, 3, 4};
  const auto b = db::integral_images(four);
  EXPECT_EQ(b.S(2, 2), 10);
  EXPECT_EQ(b.Q(2, 2), 30);
  EXPECT_EQ(db::rect_sum(b, 1, 0, 1, 2), 6);
}

TEST(IntegralImages, RectSumsMatchDirectSums) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 30; ++i) {
    const auto g = fixtures::random_gray(rng, 16, 16);
    const auto ii = db::integral_images(g);
    for (int k = 0; k < 50; ++k) {
      const int x = static_cast<int>(rng() % 16), y = static_cast<int>(rng() % 16);
      const int w = 1 + static_cast<int>(rng() % (16 - x)), h = 1 + static_cast<int>(rng() % (16 - y));
      ASSERT_EQ(db::rect_sum(ii, x, y, w, h), oracle::pixel_sum(g, x, y, w, h));
      ASSERT_EQ(db::rect_sqsum(ii, x, y, w, h), oracle::pixel_sqsum(g, x, y, w, h));
    }
  }
}

TEST(IntegralImages, SaturatedLargeImage) {
  const db::GrayImage g(1024, 1024, 255);
  const auto ii = db::integral_images(g);
  EXPECT_EQ(ii.S(1024, 1024), 255LL * 1024 * 1024);
  EXPECT_EQ(ii.Q(1024, 1024), 255LL * 255 * 1024 * 1024);
}

TEST(EvaluateWindow, TinyStumpPicksSideBySign) {
  const auto m = db::parse_cascade(tiny_cascade());
  // Bright left half: f = 1600 - 0 >= 0 -> right leaf (+1) -> passes 0.5.
  EXPECT_TRUE(db::evaluate_window(m, db::integral_images(halves(200, 0)), 0, 0, 1.0));
  EXPECT_FALSE(db::evaluate_window(m, db::integral_images(halves(0, 200)), 0, 0, 1.0));
}

TEST(EvaluateWindow, VarianceNormScalesThreshold) {
  // Inner 2x2 of halves(200, 0) holds {200, 0, 200, 0}: sqrt(4 * 80000 - 400^2) = 400.
  const auto sc = db::scale_cascade(db::parse_cascade(tiny_cascade("3.99")), 1.0);
  const auto ii = db::integral_images(halves(200, 0));
  const auto ev = db::evaluate_window_detailed(sc, ii, 0, 0);
  EXPECT_EQ(ev.norm, 400.0);
  // 1600 < 3.99 * 400 is false; at 4.01 it flips.
  EXPECT_TRUE(ev.accepted);
  const auto sc2 = db::scale_cascade(db::parse_cascade(tiny_cascade("4.01")), 1.0);
  EXPECT_FALSE(db::evaluate_window_detailed(sc2, ii, 0, 0).accepted);
}

TEST(EvaluateWindow, ConstantWindowUsesUnitNormAndStrictLess) {
  const auto ii = db::integral_images(db::GrayImage(4, 4, 90));
  // f = 0 and the norm falls back to 1: 0 < 0 is false, 0 < 0.001 is true.
  const auto at_zero = db::evaluate_window_detailed(
      db::scale_cascade(db::parse_cascade(tiny_cascade("0.")), 1.0), ii, 0, 0);
  EXPECT_EQ(at_zero.norm, 1.0);
  EXPECT_EQ(at_zero.stage_sums, std::vector<double>{1.0});
  const auto above = db::evaluate_window_detailed(
      db::scale_cascade(db::parse_cascade(tiny_cascade("0.001")), 1.0), ii, 0, 0);
  EXPECT_EQ(above.stage_sums, std::vector<double>{-1.0});
}

TEST(EvaluateWindow, StageThresholdIsInclusive) {
  const auto ii = db::integral_images(halves(200, 0));
  EXPECT_TRUE(db::evaluate_window(db::parse_cascade(tiny_cascade("0.", "1.")), ii, 0, 0, 1.0));
  EXPECT_FALSE(
      db::evaluate_window(db::parse_cascade(tiny_cascade("0.", "1.0000001")), ii, 0, 0, 1.0));
  // A stage no leaf combination can fail.
  EXPECT_TRUE(db::evaluate_window(db::parse_cascade(tiny_cascade("0.", "-5.")),
                                  db::integral_images(halves(0, 200)), 0, 0, 1.0));
}

TEST(EvaluateWindow, Errors) {
  const auto m = db::parse_cascade(tiny_cascade());
  const auto ii = db::integral_images(db::GrayImage(6, 6));
  EXPECT_EQ(code_of([&] { db::evaluate_window(m, ii, 3, 0, 1.0); }),
            db::ErrorCode::kWindowOutOfBounds);
  EXPECT_EQ(code_of([&] { db::evaluate_window(m, ii, 0, -1, 1.0); }),
            db::ErrorCode::kWindowOutOfBounds);
  EXPECT_EQ(code_of([&] { db::evaluate_window(m, ii, 0, 0, 0.9); }),
            db::ErrorCode::kConfigInvalid);
}

TEST(ScaleCascade, RecompensatedWeightsKeepZeroMean) {
  for (double s : {1.0, 1.1, 1.25, 1.7, 2.3}) {
    const auto sc = db::scale_cascade(stock(), s);
    for (const auto& stage : sc.stages) {
      for (const auto& st : stage.stumps) ASSERT_EQ(st.weighted_area(), 0.0);
    }
    EXPECT_EQ(sc.win_w, oracle::rnd(24 * s));
    EXPECT_EQ(sc.inset, oracle::rnd(s));
    EXPECT_GE(sc.extent_w, sc.win_w);
  }
}

TEST(EvaluateWindow, StockCascadeMatchesNaiveEvaluator) {
  const auto gray = db::to_grayscale(db::decode_png(fixtures::bytes(fixtures::data("face48.png"))));
  const auto ii = db::integral_images(gray);
  int accepted = 0;
  for (double s : {1.0, 1.25}) {
    const auto sc = db::scale_cascade(stock(), s);
    for (int y = 0; y + sc.extent_h <= gray.height; ++y) {
      for (int x = 0; x + sc.extent_w <= gray.width; ++x) {
        const auto got = db::evaluate_window_detailed(sc, ii, x, y);
        const auto want = oracle::evaluate(stock(), gray, x, y, s);
        ASSERT_EQ(got.accepted, want.accepted) << x << "," << y << " @" << s;
        ASSERT_EQ(got.norm, want.norm);
        ASSERT_EQ(got.stage_sums, want.stage_sums);
        accepted += got.accepted;
      }
    }
  }
  EXPECT_GT(accepted, 0);
}

TEST(GroupRectangles, IdenticalBoxesCollapse) {
  const std::vector<db::FaceBox> three(3, {10, 20, 30, 30});
  EXPECT_EQ(db::group_rectangles(three, 3), (std::vector<db::FaceBox>{{10, 20, 30, 30}}));
  EXPECT_TRUE(db::group_rectangles(three, 4).empty());
  EXPECT_TRUE(db::group_rectangles({}, 0).empty());
}

TEST(GroupRectangles, RoundedMean) {
  const std::vector<db::FaceBox> raw = {{10, 10, 30, 30}, {11, 10, 31, 30}, {100, 100, 20, 20}};
  // Mean x = 10.5 rounds half up; the far box is alone.
  EXPECT_EQ(db::group_rectangles(raw, 2), (std::vector<db::FaceBox>{{11, 10, 31, 30}}));
  EXPECT_EQ(db::group_rectangles(raw, 0).size(), 2u);
}

TEST(GroupRectangles, MatchesComponentOracle) {
  std::mt19937_64 rng(41);
  for (int i = 0; i < 200; ++i) {
    std::vector<db::FaceBox> raw;
    const int n = static_cast<int>(rng() % 25);
    for (int k = 0; k < n; ++k) {
      const int cx = 40 * static_cast<int>(rng() % 3), cy = 40 * static_cast<int>(rng() % 2);
      const int w = 20 + static_cast<int>(rng() % 6);
      raw.push_back({cx + static_cast<int>(rng() % 5), cy + static_cast<int>(rng() % 5), w,
                     w + static_cast<int>(rng() % 3)});
    }
    for (int mn : {0, 1, 2, 3}) {
      ASSERT_EQ(db::group_rectangles(raw, mn), oracle::group(raw, mn, 0.2));
    }
  }
}

TEST(DetectFaces, ConstantImageHasNoFaces) {
  EXPECT_TRUE(db::detect_faces(stock(), db::GrayImage(120, 100, 128)).empty());
  EXPECT_TRUE(db::detect_raw(stock(), db::GrayImage(120, 100, 0), {}).empty());
}

TEST(DetectFaces, ImageSmallerThanWindow) {
  EXPECT_TRUE(db::detect_faces(stock(), db::GrayImage(20, 40, 77)).empty());
  db::DetectorParams p;
  p.min_size = 60;
  EXPECT_TRUE(db::detect_faces(stock(), db::GrayImage(50, 50, 77), p).empty());
}

TEST(DetectFaces, RejectsNonGrowingScale) {
  db::DetectorParams p;
  p.scale_factor = 1.0;
  EXPECT_EQ(code_of([&] { db::detect_faces(stock(), db::GrayImage(30, 30), p); }),
            db::ErrorCode::kConfigInvalid);
}

TEST(DetectFaces, PortraitHasOneFace) {
  const auto gray =
      db::to_grayscale(db::decode_png(fixtures::bytes(fixtures::data("portrait.png"))));
  const auto faces = db::detect_faces(stock(), gray);
  ASSERT_EQ(faces.size(), 1u);
  EXPECT_GE(db::intersection_over_union(faces[0], fixtures::portrait_face()), 0.5);

  const auto raw = db::detect_raw(stock(), gray, {});
  EXPECT_EQ(faces, oracle::group(raw, 3, 0.2));
  db::DetectorParams loose;
  loose.min_neighbors = 0;
  const auto all = db::detect_faces(stock(), gray, loose);
  EXPECT_GE(all.size(), faces.size());
  for (const auto& b : raw) {
    EXPECT_EQ(b.w, b.h);
    EXPECT_GE(b.w, 30);
  }
}

}  // namespace
