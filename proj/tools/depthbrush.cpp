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

// depthbrush command line.
//
//   depthbrush run --config run.cfg [--threshold 0.6] [--<any.config.key> v]
//   depthbrush mask --input in.png --depth d.png --threshold 0.6
//   depthbrush detect --input in.png [--cascade xml]
//   depthbrush serve --listen 127.0.0.1:8080 --backend-url http://...
//   depthbrush mock-backend --listen 127.0.0.1:7860
//
// Exit status: 0 ok, 2 configuration error, 3 stage failure.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "depthbrush/config.hpp"
#include "depthbrush/facedetect.hpp"
#include "depthbrush/mock_backend.hpp"
#include "depthbrush/pipeline.hpp"
#include "depthbrush/service.hpp"

namespace db = depthbrush;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

int report(const db::Error& e) {
  std::cerr << "depthbrush: ";
  if (!e.stage().empty()) std::cerr << "stage " << e.stage() << ": ";
  std::cerr << e.what() << "\n";
  return e.code() == db::ErrorCode::kConfigInvalid ? kExitConfig : kExitStage;
}

std::pair<std::string, int> split_listen(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) {
    throw db::Error(db::ErrorCode::kConfigInvalid, "--listen expects host:port, got " + addr);
  }
  return {addr.substr(0, colon),
          db::detail::parse_value<int>("--listen port", addr.substr(colon + 1))};
}

// Blocks until SIGINT/SIGTERM.
void wait_for_signal() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
}

void block_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

struct RunArgs {
  std::string config;
  std::map<std::string, std::string> keyed;  // --<dotted.key>
  std::map<std::string, std::string> shortcuts;
};

void add_run(CLI::App& app, RunArgs& a) {
  auto* run = app.add_subcommand("run", "run the full pipeline");
  run->add_option("--config", a.config, "key = value config file");
  static const std::pair<const char*, const char*> kShortcuts[] = {
      {"--input", "input_image"},
      {"--depth", "depth_source.path"},
      {"--background-prompt", "background_prompt"},
      {"--clothes-prompt", "clothes_prompt"},
      {"--threshold", "depth_threshold"},
      {"--seed-background", "seeds.background"},
      {"--seed-inpaint", "seeds.inpaint"},
      {"--backend-url", "backend.base_url"},
      {"--output-dir", "output_dir"},
  };
  for (const auto& [flag, key] : kShortcuts) {
    run->add_option_function<std::string>(
        flag, [&a, key = std::string(key)](const std::string& v) { a.shortcuts[key] = v; },
        "sets " + std::string(key));
  }
  for (const auto& k : db::config_keys()) {
    run->add_option_function<std::string>(
        "--" + k.name, [&a, name = k.name](const std::string& v) { a.keyed[name] = v; }, k.help);
  }
}

int do_run(const RunArgs& a) {
  db::PipelineConfig cfg;
  try {
    if (!a.config.empty()) cfg = db::load_config_file(a.config);
    db::apply_backend_env(cfg.backend);
    for (const auto& [k, v] : a.keyed) db::set_config_value(cfg, k, v);
    for (const auto& [k, v] : a.shortcuts) db::set_config_value(cfg, k, v);
    db::validate(cfg);
  } catch (const db::Error& e) {
    return report(e);
  }
  try {
    const auto art = db::run_pipeline(cfg);
    for (const auto& s : art.stages) std::cout << s.content_hash << "  " << s.path.string() << "\n";
    return kExitOk;
  } catch (const db::Error& e) {
    return report(e);
  }
}

struct MaskArgs {
  std::string input, depth, cascade = db::default_cascade_path().string(), output_dir = ".";
  double threshold = 0.6;
  int kernel = 5;
  double fa = 1.2, fb = 1.4;
};

int do_mask(const MaskArgs& a) {
  try {
    const auto image = db::decode_png(db::read_file(a.input));
    const auto depth = db::normalize_depth(db::load_depth(db::read_file(a.depth)));
    const auto model = db::parse_cascade(db::read_file(a.cascade));
    const auto faces = db::detect_faces(model, db::to_grayscale(image));
    db::MaskSettings s;
    s.threshold = a.threshold;
    s.kernel = a.kernel;
    s.expand = {a.fa, a.fb};
    const auto masks = db::preview_mask(image, depth, a.threshold, faces, s);
    db::fs::create_directories(a.output_dir);
    db::write_file_atomic(db::fs::path(a.output_dir) / "subject_mask.png",
                          db::encode_mask_png(masks.subject));
    db::write_file_atomic(db::fs::path(a.output_dir) / "inpaint_mask.png",
                          db::encode_mask_png(masks.inpaint));
    std::cout << db::Json{{"subject_pixels", masks.subject.count()},
                          {"inpaint_pixels", masks.inpaint.count()},
                          {"faces", db::faces_to_json(faces)}}
                     .dump()
              << "\n";
    return kExitOk;
  } catch (const db::Error& e) {
    return report(e);
  }
}

int do_detect(const std::string& input, const std::string& cascade, const db::DetectorParams& p) {
  try {
    const auto image = db::decode_png(db::read_file(input));
    const auto model = db::parse_cascade(db::read_file(cascade));
    std::cout << db::faces_to_json(db::detect_faces(model, db::to_grayscale(image), p)).dump()
              << "\n";
    return kExitOk;
  } catch (const db::Error& e) {
    return report(e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"depth-driven background and clothing replacement"};
  app.require_subcommand(1);

  RunArgs run_args;
  add_run(app, run_args);

  MaskArgs mask_args;
  auto* mask = app.add_subcommand("mask", "write subject and inpaint masks (no backend)");
  mask->add_option("--input", mask_args.input, "input PNG")->required();
  mask->add_option("--depth", mask_args.depth, "depth file (16-bit PNG or PFM)")->required();
  mask->add_option("--threshold", mask_args.threshold, "subject threshold")->required();
  mask->add_option("--cascade", mask_args.cascade, "Haar cascade XML");
  mask->add_option("--output-dir", mask_args.output_dir, "where the masks go");
  mask->add_option("--morph-kernel", mask_args.kernel, "opening kernel size");
  mask->add_option("--fa", mask_args.fa, "face ellipse width factor");
  mask->add_option("--fb", mask_args.fb, "face ellipse height factor");

  std::string detect_input, detect_cascade = db::default_cascade_path().string();
  db::DetectorParams detect_params;
  auto* detect = app.add_subcommand("detect", "print detected faces as JSON");
  detect->add_option("--input", detect_input, "input PNG")->required();
  detect->add_option("--cascade", detect_cascade, "Haar cascade XML");
  detect->add_option("--scale-factor", detect_params.scale_factor);
  detect->add_option("--min-neighbors", detect_params.min_neighbors);
  detect->add_option("--min-size", detect_params.min_size);

  db::ServiceOptions svc;
  std::string listen = "127.0.0.1:8080";
  auto* serve = app.add_subcommand("serve", "HTTP session API");
  serve->add_option("--listen", listen, "host:port");
  serve->add_option("--backend-url", svc.backend.base_url, "diffusion backend URL");
  serve->add_option("--backend-timeout", svc.backend.timeout_s, "seconds per backend request");
  serve->add_option("--session-ttl", svc.session_ttl_s, "session lifetime in seconds");
  serve->add_option("--allow-origin", svc.allow_origin, "CORS origin for the studio UI");
  serve->add_option("--cascade", svc.cascade_path, "Haar cascade XML");
  serve->add_option("--runs-dir", svc.runs_dir, "root for per-job run directories");
  serve->add_option("--workers", svc.workers, "generate worker threads");
  serve->add_option("--static-dir", svc.static_dir, "files served under /");

  std::string mock_listen = "127.0.0.1:7860";
  bool no_depth = false;
  auto* mock = app.add_subcommand("mock-backend", "deterministic stand-in backend");
  mock->add_option("--listen", mock_listen, "host:port");
  mock->add_flag("--no-depth", no_depth, "do not serve /v1/depth");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  if (app.got_subcommand("run")) return do_run(run_args);
  if (app.got_subcommand("mask")) return do_mask(mask_args);
  if (app.got_subcommand("detect")) return do_detect(detect_input, detect_cascade, detect_params);

  try {
    if (app.got_subcommand("serve")) {
      const auto [host, port] = split_listen(listen);
      if (serve->count("--backend-url") == 0) db::apply_backend_env(svc.backend);
      block_signals();
      db::Service service(svc);
      const int bound = service.start(host, port);
      std::cerr << "depthbrush: serving on " << host << ":" << bound << "\n";
      wait_for_signal();
      service.stop();
      return kExitOk;
    }
    if (app.got_subcommand("mock-backend")) {
      const auto [host, port] = split_listen(mock_listen);
      block_signals();
      db::MockBackend backend({host, port, !no_depth});
      std::cout << backend.url() << std::endl;
      wait_for_signal();
      backend.stop();
      return kExitOk;
    }
  } catch (const db::Error& e) {
    return report(e);
  }
  return kExitConfig;
}
