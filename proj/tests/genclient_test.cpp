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

#include <cstdlib>
#include <mutex>

#include "depthbrush/genclient.hpp"
#include "depthbrush/mock_backend.hpp"
#include "fixtures.hpp"
#include "scripted_server.hpp"

namespace db = depthbrush;
using fixtures::code_of;
using scripted::Action;

namespace {

struct Recorder {
  std::mutex mu;
  std::vector<db::AttemptRecord> records;
  db::BackendClient::AttemptSink sink() {
    return [this](const db::AttemptRecord& r) {
      std::lock_guard lock(mu);
      records.push_back(r);
    };
  }
};

db::BackendEndpoint endpoint(const std::string& url, double timeout = 5.0, int retries = 1) {
  return {url, timeout, retries};
}

db::GenerationRequest gen(const std::string& prompt, std::uint64_t seed, int w = 64, int h = 64) {
  db::GenerationRequest r;
  r.prompt = prompt;
  r.seed = seed;
  r.width = w;
  r.height = h;
  return r;
}

std::string image_body(const db::RasterImage& img) {
  return db::Json{{"image", db::base64_encode(db::encode_png(img))}}.dump();
}

TEST(WireFormat, Txt2ImgFields) {
  const auto j = db::to_json(gen("a cat", 7, 128, 64));
  EXPECT_EQ(j, (db::Json{{"prompt", "a cat"}, {"width", 128}, {"height", 64}, {"steps", 4},
                         {"guidance", 1.5}, {"seed", 7}}));
  const auto back = db::generation_request_from_json(j);
  EXPECT_EQ(db::to_json(back), j);
}

TEST(WireFormat, InpaintRoundTrip) {
  std::mt19937_64 rng(71);
  db::InpaintRequest r;
  r.prompt = "coat";
  r.image = fixtures::random_image(rng, 9, 5);
  r.mask = fixtures::random_mask(rng, 9, 5);
  r.seed = 0xfedcba9876543210ULL;
  const auto j = db::to_json(r);
  for (const char* k : {"prompt", "image", "mask", "guidance_scale", "num_inference_steps",
                        "strength", "seed"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  const auto back = db::inpaint_request_from_json(j);
  EXPECT_EQ(back.image, r.image);
  EXPECT_EQ(back.mask, r.mask);
  EXPECT_EQ(back.seed, r.seed);
  EXPECT_EQ(db::to_json(back), j);
}

TEST(WireFormat, MissingOrMistypedFieldIsBadPayload) {
  auto j = db::to_json(gen("x", 1));
  j.erase("steps");
  EXPECT_EQ(code_of([&] { db::generation_request_from_json(j); }), db::ErrorCode::kBadPayload);
  j["steps"] = "four";
  EXPECT_EQ(code_of([&] { db::generation_request_from_json(j); }), db::ErrorCode::kBadPayload);
}

TEST(Validate, GenerationDims) {
  EXPECT_EQ(code_of([] { db::validate(gen("x", 1, 60, 64)); }), db::ErrorCode::kConfigInvalid);
  EXPECT_EQ(code_of([] { db::validate(gen("x", 1, 64, 4096)); }), db::ErrorCode::kConfigInvalid);
  EXPECT_FALSE(code_of([] { db::validate(gen("x", 1, 2048, 8 * 8)); }));
}

TEST(SplitBaseUrl, PrefixAndScheme) {
  const auto a = db::split_base_url("http://host:99/api/");
  EXPECT_EQ(a.scheme_host_port, "http://host:99");
  EXPECT_EQ(a.prefix, "/api");
  EXPECT_EQ(db::split_base_url("127.0.0.1:5").scheme_host_port, "http://127.0.0.1:5");
  EXPECT_EQ(code_of([] { db::split_base_url("https://x"); }), db::ErrorCode::kConfigInvalid);
}

TEST(MockBackend, Txt2ImgIsDeterministic) {
  db::MockBackend mock;
  const db::BackendClient client(endpoint(mock.url()));
  const auto a = client.txt2img(gen("pirate ship", 1));
  EXPECT_EQ(a, client.txt2img(gen("pirate ship", 1)));
  EXPECT_NE(a, client.txt2img(gen("pirate ship", 2)));
  EXPECT_NE(a, client.txt2img(gen("pirate boat", 1)));
  EXPECT_EQ(a, db::mock_txt2img("pirate ship", 1, 64, 64));
  EXPECT_EQ(mock.hits("/v1/txt2img"), 4);
}

TEST(MockBackend, BandColorsIndependentOfSize) {
  db::MockBackend mock;
  const db::BackendClient client(endpoint(mock.url()));
  const auto small = client.txt2img(gen("p", 3, 64, 128));
  const auto big = client.txt2img(gen("p", 3, 192, 256));
  for (int y = 0; y < 128; ++y) {
    for (int k = 0; k < 3; ++k) ASSERT_EQ(small.at(0, y, k), big.at(191, y, k));
  }
  // Rows 0..63 share a color, row 64 opens the next band.
  EXPECT_EQ(small.at(0, 0, 0), small.at(0, 63, 0));
  const auto c0 = db::mock_band_color("p", 3, 0), c1 = db::mock_band_color("p", 3, 1);
  EXPECT_NE(c0, c1);
  EXPECT_EQ(small.at(0, 64, 1), c1[1]);
}

TEST(MockBackend, InpaintPreservesUnmaskedPixels) {
  db::MockBackend mock;
  const db::BackendClient client(endpoint(mock.url()));
  std::mt19937_64 rng(72);
  db::InpaintRequest r;
  r.prompt = "clothes";
  r.image = fixtures::random_image(rng, 40, 70);
  r.mask = fixtures::random_mask(rng, 40, 70, 0.4);
  r.seed = 9;
  const auto out = client.inpaint(r);
  const auto bands = db::mock_txt2img("clothes", 9, 40, 70);
  for (int y = 0; y < 70; ++y) {
    for (int x = 0; x < 40; ++x) {
      for (int k = 0; k < 3; ++k) {
        ASSERT_EQ(out.at(x, y, k), r.mask.at(x, y) ? bands.at(x, y, k) : r.image.at(x, y, k));
      }
    }
  }
}

TEST(MockBackend, DepthPeaksAtCenter) {
  db::MockBackend mock;
  const db::BackendClient client(endpoint(mock.url()));
  const auto d = client.estimate_depth_remote(db::RasterImage(31, 21, 3));
  ASSERT_EQ(d.width, 31);
  ASSERT_EQ(d.height, 21);
  EXPECT_EQ(d.at(15, 10), 65535.0);
  EXPECT_EQ(d.at(0, 0), 0.0);
  EXPECT_LT(d.at(3, 10), d.at(10, 10));
}

TEST(MockBackend, DepthRouteCanBeDisabled) {
  db::MockBackend mock({.serve_depth = false});
  const db::BackendClient client(endpoint(mock.url()));
  EXPECT_EQ(code_of([&] { client.estimate_depth_remote(db::RasterImage(8, 8, 3)); }),
            db::ErrorCode::kBackendRejected);
}

TEST(Protocol, TransportDropIsRetried) {
  const auto img = db::mock_txt2img("p", 1, 64, 64);
  scripted::Server server({Action::drop(), Action::respond(200, image_body(img))});
  Recorder rec;
  const db::BackendClient client(endpoint(server.url(), 5.0, 1), rec.sink());
  EXPECT_EQ(client.txt2img(gen("p", 1)), img);
  EXPECT_EQ(server.connections(), 2);
  ASSERT_EQ(rec.records.size(), 2u);
  EXPECT_EQ(rec.records[0].attempt, 1);
  EXPECT_EQ(rec.records[0].status, 0);
  EXPECT_EQ(rec.records[0].outcome.rfind("transport", 0), 0u);
  EXPECT_EQ(rec.records[1].attempt, 2);
  EXPECT_EQ(rec.records[1].outcome, "ok");
}

TEST(Protocol, RetriesExhaustedIsUnreachable) {
  scripted::Server server({Action::drop()});
  const db::BackendClient client(endpoint(server.url(), 5.0, 2));
  EXPECT_EQ(code_of([&] { client.txt2img(gen("p", 1)); }), db::ErrorCode::kBackendUnreachable);
  EXPECT_EQ(server.connections(), 3);
}

TEST(Protocol, ClientErrorIsRejectedWithBody) {
  scripted::Server server({Action::respond(404, R"({"error":"no such model"})")});
  const db::BackendClient client(endpoint(server.url(), 5.0, 3));
  try {
    client.txt2img(gen("p", 1));
    FAIL() << "expected an error";
  } catch (const db::Error& e) {
    EXPECT_EQ(e.code(), db::ErrorCode::kBackendRejected);
    EXPECT_NE(e.detail().find(R"({"error":"no such model"})"), std::string::npos);
  }
  EXPECT_EQ(server.connections(), 1);  // HTTP statuses are not retried
}

TEST(Protocol, ServerErrorAndRedirectAreFailed) {
  for (int status : {500, 503, 302}) {
    scripted::Server server({Action::respond(status, "{}")});
    const db::BackendClient client(endpoint(server.url(), 5.0, 3));
    EXPECT_EQ(code_of([&] { client.txt2img(gen("p", 1)); }), db::ErrorCode::kBackendFailed)
        << status;
    EXPECT_EQ(server.connections(), 1);
  }
}

TEST(Protocol, BadPayloads) {
  const std::vector<std::string> bodies = {
      "not json", R"({"picture":"x"})", R"({"image":"$$$"})", R"({"image":"Zm9vYmFy"})",
      image_body(db::mock_txt2img("p", 1, 64, 72))};
  for (const auto& body : bodies) {
    scripted::Server server({Action::respond(200, body)});
    const db::BackendClient client(endpoint(server.url()));
    EXPECT_EQ(code_of([&] { client.txt2img(gen("p", 1)); }), db::ErrorCode::kBadPayload)
        << body.substr(0, 40);
  }
}

TEST(Protocol, DepthDimsMismatchIsBadPayload) {
  const auto depth = db::mock_depth(4, 4);
  scripted::Server server(
      {Action::respond(200, db::Json{{"depth", db::base64_encode(db::encode_depth_png16(depth))}}.dump())});
  const db::BackendClient client(endpoint(server.url()));
  EXPECT_EQ(code_of([&] { client.estimate_depth_remote(db::RasterImage(8, 8, 3)); }),
            db::ErrorCode::kBadPayload);
}

TEST(Protocol, SlowBackendTimesOut) {
  scripted::Server server({Action::respond(200, "{}", 3000)});
  const db::BackendClient client(endpoint(server.url(), 0.3, 0));
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { client.txt2img(gen("p", 1)); }), db::ErrorCode::kBackendUnreachable);
  EXPECT_LT(std::chrono::steady_clock::now() - t0, std::chrono::seconds(2));
}

TEST(Protocol, BaseUrlPrefixIsKept) {
  scripted::Server server({Action::respond(404, "{}")});
  const db::BackendClient client(endpoint(server.url() + "/shim/"));
  code_of([&] { client.txt2img(gen("p", 1)); });
  EXPECT_EQ(server.paths(), std::vector<std::string>{"/shim/v1/txt2img"});
}

TEST(Protocol, RefusedConnectionIsUnreachable) {
  int port = 0;
  {
    scripted::Server server({Action::drop()});
    port = server.port();
  }
  const db::BackendClient client(endpoint("http://127.0.0.1:" + std::to_string(port), 1.0, 1));
  EXPECT_EQ(code_of([&] { client.txt2img(gen("p", 1)); }), db::ErrorCode::kBackendUnreachable);
}

TEST(BackendEnv, OverridesBaseUrl) {
  db::BackendEndpoint ep;
  ep.base_url = "http://configured:1";
  ::setenv(db::kBackendUrlEnv, "http://from-env:2", 1);
  db::apply_backend_env(ep);
  EXPECT_EQ(ep.base_url, "http://from-env:2");
  ::setenv(db::kBackendUrlEnv, "", 1);
  db::apply_backend_env(ep);
  EXPECT_EQ(ep.base_url, "http://from-env:2");
  ::unsetenv(db::kBackendUrlEnv);
}

TEST(BackendClient, RejectsNonPositiveTimeout) {
  EXPECT_EQ(code_of([] { db::BackendClient c(endpoint("http://x", 0.0)); }),
            db::ErrorCode::kConfigInvalid);
}

}  // namespace
