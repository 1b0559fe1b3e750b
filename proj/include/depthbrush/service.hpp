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

// Session API for interactive clients.
//
//   POST /api/sessions                        raw PNG body, or multipart with
//                                             "image" and optional "depth"
//   GET  /api/sessions/{id}/mask?threshold=t&kind=subject|inpaint
//   POST /api/sessions/{id}/generate          JSON body, see parse_generate_body
//   GET  /api/sessions/{id}/jobs/{job}
//   GET  /api/sessions/{id}/artifacts/{stage}
//
// Sessions live in memory for a fixed TTL from creation. Each generate job
// writes its own run directory <runs_dir>/<session>/<job>.

#pragma once

#include <openssl/rand.h>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "depthbrush/config.hpp"
#include "depthbrush/facedetect.hpp"
#include "depthbrush/genclient.hpp"
#include "depthbrush/pipeline.hpp"

namespace depthbrush {

using Clock = std::chrono::steady_clock;

enum class JobState { kQueued, kRunning, kDone, kFailed };

inline std::string_view job_state_name(JobState s) {
  switch (s) {
    case JobState::kQueued: return "queued";
    case JobState::kRunning: return "running";
    case JobState::kDone: return "done";
    case JobState::kFailed: return "failed";
  }
  return "unknown";
}

struct ServiceOptions {
  BackendEndpoint backend;
  double session_ttl_s = 3600.0;
  fs::path cascade_path = default_cascade_path();
  DetectorParams detector;
  MaskSettings mask;  // threshold here is the default for previews
  fs::path runs_dir = "runs";
  int workers = 2;
  std::string allow_origin;  // empty: no CORS headers
  fs::path static_dir;       // empty: nothing served under /
  std::function<Clock::time_point()> now = [] { return Clock::now(); };
  // Called on every job state change, from the thread making the change.
  std::function<void(const std::string& job, JobState)> on_job_state;
};

/// 128 random bits as 32 lowercase hex digits.
inline std::string random_hex_id() {
  unsigned char buf[16];
  if (RAND_bytes(buf, sizeof(buf)) != 1) throw Error(ErrorCode::kIo, "RAND_bytes failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : buf) {
    out += kHex[c >> 4];
    out += kHex[c & 15];
  }
  return out;
}

/// Fixed-size pool running queued tasks in FIFO order.
class WorkerPool {
 public:
  explicit WorkerPool(int n) {
    for (int i = 0; i < std::max(1, n); ++i) threads_.emplace_back([this] { loop(); });
  }
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;
  ~WorkerPool() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(mu_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

 private:
  void loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

// Immutable once built; jobs hold a reference so expiry cannot pull the
// inputs out from under them.
struct SessionInputs {
  RasterImage image;
  DepthMap depth_raw;
  DepthMap depth_norm;
  std::vector<FaceBox> faces;
};

struct Job {
  std::string id;
  JobState state = JobState::kQueued;
  std::string error;
  std::string error_code;
  std::string stage;
  StageArtifacts artifacts;
};

struct Session {
  std::string id;
  std::shared_ptr<const SessionInputs> inputs;
  Clock::time_point created_at;
  std::map<std::string, std::shared_ptr<Job>> jobs;
  std::shared_ptr<Job> latest;
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline HttpReply json_reply(int status, const Json& j) { return {status, j.dump(), "application/json"}; }

inline HttpReply error_reply(int status, const std::string& msg, std::string_view code = {}) {
  Json j{{"error", msg}};
  if (!code.empty()) j["code"] = std::string(code);
  return json_reply(status, j);
}

inline bool is_backend_error(ErrorCode c) {
  return c == ErrorCode::kBackendUnreachable || c == ErrorCode::kBackendRejected ||
         c == ErrorCode::kBackendFailed || c == ErrorCode::kBadPayload;
}

/// Body of POST /generate. Missing fields take the defaults in `base`.
///   {"background_prompt", "clothes_prompt", "threshold",
///    "seeds": {"background", "inpaint"},
///    "gen_params": {"background": {"width","height","num_inference_steps","guidance_scale"},
///                   "inpaint": {"num_inference_steps","guidance_scale","strength"}}}
inline RunSettings parse_generate_body(const Json& j, RunSettings base) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::kConfigInvalid, m); };
  if (!j.is_object()) bad("body must be a JSON object");
  auto take = [&](const Json& obj, const char* key, auto& dst) {
    if (auto it = obj.find(key); it != obj.end()) {
      try {
        it->get_to(dst);
      } catch (const Json::exception&) {
        bad(std::string("bad field ") + key);
      }
    }
  };
  take(j, "background_prompt", base.gen.background_prompt);
  take(j, "clothes_prompt", base.gen.clothes_prompt);
  take(j, "threshold", base.mask.threshold);
  if (auto it = j.find("seeds"); it != j.end() && it->is_object()) {
    take(*it, "background", base.gen.seeds.background);
    take(*it, "inpaint", base.gen.seeds.inpaint);
  }
  if (auto gp = j.find("gen_params"); gp != j.end() && gp->is_object()) {
    if (auto b = gp->find("background"); b != gp->end() && b->is_object()) {
      take(*b, "width", base.gen.params.background_width);
      take(*b, "height", base.gen.params.background_height);
      take(*b, "num_inference_steps", base.gen.params.background_steps);
      take(*b, "guidance_scale", base.gen.params.background_guidance);
    }
    if (auto i = gp->find("inpaint"); i != gp->end() && i->is_object()) {
      take(*i, "num_inference_steps", base.gen.params.inpaint_steps);
      take(*i, "guidance_scale", base.gen.params.inpaint_guidance);
      take(*i, "strength", base.gen.params.inpaint_strength);
    }
  }
  if (base.gen.background_prompt.empty()) bad("background_prompt must be non-empty");
  if (base.gen.clothes_prompt.empty()) bad("clothes_prompt must be non-empty");
  if (!(base.mask.threshold >= 0.0 && base.mask.threshold <= 1.0)) bad("threshold must be in [0,1]");
  if (!(base.gen.params.inpaint_strength >= 0.0 && base.gen.params.inpaint_strength <= 1.0)) {
    bad("strength must be in [0,1]");
  }
  return base;
}

inline std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".json") return "application/json";
  return "application/octet-stream";
}

class Service {
 public:
  explicit Service(ServiceOptions opts)
      : opts_(std::move(opts)),
        cascade_(parse_cascade(read_file(opts_.cascade_path))),
        pool_(std::make_unique<WorkerPool>(opts_.workers)) {
    routes();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  /// Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host, int port) {
    port_ = port == 0 ? server_.bind_to_any_port(host)
                      : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void wait() {
    if (thread_.joinable()) thread_.join();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
    pool_.reset();  // drains queued jobs
  }

  int port() const { return port_; }
  httplib::Server& server() { return server_; }

  // --- handlers, callable without HTTP ------------------------------------

  HttpReply create_session(std::span<const std::uint8_t> image_bytes,
                           std::optional<std::span<const std::uint8_t>> depth_bytes) {
    auto inputs = std::make_shared<SessionInputs>();
    try {
      inputs->image = decode_png(image_bytes);
    } catch (const Error& e) {
      return error_reply(400, "image: " + e.detail(), error_code_name(e.code()));
    }
    if (depth_bytes) {
      try {
        inputs->depth_raw = load_depth(*depth_bytes);
      } catch (const Error& e) {
        return error_reply(400, "depth: " + e.detail(), error_code_name(e.code()));
      }
      if (inputs->depth_raw.width != inputs->image.width ||
          inputs->depth_raw.height != inputs->image.height) {
        return error_reply(400, "depth dims do not match the image", "DimMismatch");
      }
    } else {
      try {
        inputs->depth_raw = BackendClient(opts_.backend).estimate_depth_remote(inputs->image);
      } catch (const Error& e) {
        return error_reply(502, "depth backend: " + e.detail(), error_code_name(e.code()));
      }
    }
    inputs->depth_norm = normalize_depth(inputs->depth_raw);
    inputs->faces = detect_faces(cascade_, to_grayscale(inputs->image), opts_.detector);

    auto s = std::make_shared<Session>();
    s->inputs = inputs;
    s->created_at = opts_.now();
    {
      std::lock_guard lock(mu_);
      purge_expired_locked();
      do {
        s->id = random_hex_id();
      } while (sessions_.count(s->id) != 0);
      sessions_[s->id] = s;
    }
    return json_reply(201, Json{{"id", s->id},
                                {"width", inputs->image.width},
                                {"height", inputs->image.height},
                                {"faces", faces_to_json(inputs->faces)}});
  }

  HttpReply mask_preview(const std::string& id, std::optional<std::string> threshold,
                         std::optional<std::string> kind) {
    auto session = find_session(id);
    if (!session) return error_reply(404, "no such session");
    double t = opts_.mask.threshold;
    if (threshold) {
      try {
        t = detail::parse_value<double>("threshold", *threshold);
      } catch (const Error& e) {
        return error_reply(400, e.detail(), "ThresholdOutOfRange");
      }
    }
    if (!(t >= 0.0 && t <= 1.0)) return error_reply(400, "threshold must be in [0,1]", "ThresholdOutOfRange");
    const std::string k = kind.value_or("subject");
    if (k != "subject" && k != "inpaint") return error_reply(400, "kind must be subject or inpaint");
    const auto& in = *session->inputs;
    const MaskPair masks = preview_mask(in.image, in.depth_norm, t, in.faces, opts_.mask);
    return {200, bytes_to_string(encode_mask_png(k == "subject" ? masks.subject : masks.inpaint)),
            "image/png"};
  }

  HttpReply generate(const std::string& id, const std::string& body) {
    auto session = find_session(id);
    if (!session) return error_reply(404, "no such session");
    RunSettings settings;
    try {
      RunSettings base;
      base.mask = opts_.mask;
      settings = parse_generate_body(Json::parse(body), base);
    } catch (const Json::parse_error& e) {
      return error_reply(400, std::string("body is not JSON: ") + e.what());
    } catch (const Error& e) {
      return error_reply(400, e.detail(), error_code_name(e.code()));
    }
    auto job = std::make_shared<Job>();
    {
      std::lock_guard lock(mu_);
      if (session->latest && (session->latest->state == JobState::kQueued ||
                              session->latest->state == JobState::kRunning)) {
        return error_reply(409, "a job is already running for this session");
      }
      do {
        job->id = random_hex_id();
      } while (session->jobs.count(job->id) != 0);
      session->jobs[job->id] = job;
      session->latest = job;
    }
    notify(job->id, JobState::kQueued);
    const fs::path dir = opts_.runs_dir / session->id / job->id;
    pool_->submit([this, job, inputs = session->inputs, settings, dir] {
      run_job(*job, *inputs, settings, dir);
    });
    return json_reply(202, Json{{"job", job->id}});
  }

  HttpReply job_status(const std::string& id, const std::string& job_id) {
    auto session = find_session(id);
    if (!session) return error_reply(404, "no such session");
    std::lock_guard lock(mu_);
    auto it = session->jobs.find(job_id);
    if (it == session->jobs.end()) return error_reply(404, "no such job");
    const Job& j = *it->second;
    Json out{{"state", std::string(job_state_name(j.state))}};
    if (j.state == JobState::kFailed) {
      out["error"] = j.error;
      out["code"] = j.error_code;
      out["stage"] = j.stage;
    }
    return json_reply(200, out);
  }

  HttpReply artifact(const std::string& id, const std::string& stage) {
    auto session = find_session(id);
    if (!session) return error_reply(404, "no such session");
    fs::path path;
    {
      std::lock_guard lock(mu_);
      if (!session->latest) return error_reply(404, "no artifacts yet");
      const StageRecord* rec = session->latest->artifacts.find(stage);
      if (rec == nullptr) return error_reply(404, "stage not produced: " + stage);
      path = rec->path;
    }
    try {
      return {200, bytes_to_string(read_file(path)), content_type_for(path)};
    } catch (const Error& e) {
      return error_reply(404, e.detail());
    }
  }

 private:
  static std::string bytes_to_string(const std::vector<std::uint8_t>& b) {
    return std::string(b.begin(), b.end());
  }

  static std::span<const std::uint8_t> as_bytes(const std::string& s) {
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
  }

  void notify(const std::string& job, JobState s) {
    if (opts_.on_job_state) opts_.on_job_state(job, s);
  }

  void set_state(Job& job, JobState s) {
    {
      std::lock_guard lock(mu_);
      job.state = s;
    }
    notify(job.id, s);
  }

  void run_job(Job& job, const SessionInputs& in, const RunSettings& settings,
               const fs::path& dir) {
    set_state(job, JobState::kRunning);
    try {
      RunWriter w(dir);
      const BackendClient client(opts_.backend, [&w](const AttemptRecord& r) {
        w.log("backend " + r.path + " attempt " + std::to_string(r.attempt) + ": " + r.outcome);
      });
      const auto faces = in.faces;
      StageArtifacts art =
          run_stages(in.image, in.depth_raw, [faces] { return faces; }, settings, client, w);
      {
        std::lock_guard lock(mu_);
        job.artifacts = std::move(art);
        job.state = JobState::kDone;
      }
      notify(job.id, JobState::kDone);
    } catch (const Error& e) {
      {
        std::lock_guard lock(mu_);
        job.error = e.detail();
        job.error_code = std::string(error_code_name(e.code()));
        job.stage = e.stage();
        // Partial artifacts stay readable for inspection.
        if (auto done = read_partial(dir)) job.artifacts = std::move(*done);
        job.state = JobState::kFailed;
      }
      notify(job.id, JobState::kFailed);
    } catch (const std::exception& e) {
      {
        std::lock_guard lock(mu_);
        job.error = e.what();
        job.error_code = "Io";
        job.state = JobState::kFailed;
      }
      notify(job.id, JobState::kFailed);
    }
  }

  // Stage files left behind by a failed run, in stage order.
  static std::optional<StageArtifacts> read_partial(const fs::path& dir) {
    StageArtifacts a;
    a.run_dir = dir;
    for (const auto& s : kStages) {
      const fs::path p = dir / s.file;
      if (!fs::exists(p)) continue;
      a.stages.push_back({std::string(s.name), p, sha256_hex(read_file(p))});
    }
    return a;
  }

  std::shared_ptr<Session> find_session(const std::string& id) {
    std::lock_guard lock(mu_);
    purge_expired_locked();
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  void purge_expired_locked() {
    const auto now = opts_.now();
    const auto ttl = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(opts_.session_ttl_s));
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      it = now - it->second->created_at >= ttl ? sessions_.erase(it) : std::next(it);
    }
  }

  static void send(httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  }

  static std::optional<std::string> query(const httplib::Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
  }

  void routes() {
    if (!opts_.allow_origin.empty()) {
      server_.set_default_headers({{"Access-Control-Allow-Origin", opts_.allow_origin},
                                   {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                   {"Access-Control-Allow-Headers", "Content-Type"}});
      server_.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
      });
    }
    if (!opts_.static_dir.empty()) server_.set_mount_point("/", opts_.static_dir.string());

    server_.set_exception_handler(
        [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
          HttpReply r = error_reply(500, "internal error");
          try {
            std::rethrow_exception(ep);
          } catch (const Error& e) {
            r = error_reply(is_backend_error(e.code()) ? 502 : 400, e.detail(),
                            error_code_name(e.code()));
          } catch (const std::exception& e) {
            r = error_reply(500, e.what());
          }
          send(res, r);
        });

    server_.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      if (req.is_multipart_form_data()) {
        if (!req.has_file("image")) return send(res, error_reply(400, "missing image part"));
        const auto image = req.get_file_value("image").content;
        std::optional<std::string> depth;
        if (req.has_file("depth")) depth = req.get_file_value("depth").content;
        std::optional<std::span<const std::uint8_t>> depth_span;
        if (depth) depth_span = as_bytes(*depth);
        return send(res, create_session(as_bytes(image), depth_span));
      }
      send(res, create_session(as_bytes(req.body), std::nullopt));
    });
    server_.Get("/api/sessions/:id/mask", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, mask_preview(req.path_params.at("id"), query(req, "threshold"), query(req, "kind")));
    });
    server_.Post("/api/sessions/:id/generate",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   send(res, generate(req.path_params.at("id"), req.body));
                 });
    server_.Get("/api/sessions/:id/jobs/:job",
                [this](const httplib::Request& req, httplib::Response& res) {
                  send(res, job_status(req.path_params.at("id"), req.path_params.at("job")));
                });
    server_.Get("/api/sessions/:id/artifacts/:stage",
                [this](const httplib::Request& req, httplib::Response& res) {
                  send(res, artifact(req.path_params.at("id"), req.path_params.at("stage")));
                });
  }

  ServiceOptions opts_;
  CascadeModel cascade_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::unique_ptr<WorkerPool> pool_;  // last member: joined before the rest goes away
};

}  // namespace depthbrush
