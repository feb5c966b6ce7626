#pragma once

// HTTP control plane for the interactive workflow:
// caption -> scored candidates -> (override) -> propagate -> compare versions.
//
//   POST /sessions                      {"clip_manifest": path}
//   POST /sessions/{id}/caption         {"caption", "candidate_count"?, "seed"?, "async"?}
//   POST /sessions/{id}/exemplar        {"index"}
//   POST /sessions/{id}/propagate       {"alpha"?, "async"?}
//   GET  /sessions, /sessions/{id}, /sessions/{id}/candidates,
//        /sessions/{id}/result/{version}, /sessions/{id}/metrics
//   GET  /sessions/{id}/frames/input/{t} | candidate/{k} | result/{v}/{t} | truth/{t}   (PNG)
//
// Sessions live in <data_root>/sessions/<id>/ as session.json plus PNGs and
// are reloaded on startup. Mutations on one session are serialized by a
// per-session writer lock; reads take a shared lock on the committed state.

#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "controlcol/backends.hpp"
#include "controlcol/color.hpp"
#include "controlcol/error.hpp"
#include "controlcol/frame_io.hpp"
#include "controlcol/metrics.hpp"
#include "controlcol/pipeline.hpp"
#include "controlcol/quality.hpp"
#include "controlcol/selection.hpp"

// After Eigen: <resolv.h>, pulled in here, defines a `_res` macro that
// collides with Eigen parameter names.
#include <httplib.h>

namespace controlcol {

class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

enum class SessionState { created, candidates_ready, propagated, failed };

inline std::string to_string(SessionState s) {
  switch (s) {
    case SessionState::created: return "created";
    case SessionState::candidates_ready: return "candidates_ready";
    case SessionState::propagated: return "propagated";
    case SessionState::failed: return "failed";
  }
  return "unknown";
}

inline SessionState session_state_from_string(const std::string& s) {
  if (s == "created") return SessionState::created;
  if (s == "candidates_ready") return SessionState::candidates_ready;
  if (s == "propagated") return SessionState::propagated;
  if (s == "failed") return SessionState::failed;
  throw InvalidArgument("unknown session state '" + s + "'");
}

struct CaptionRequest {
  std::string caption;
  std::size_t candidate_count = 8;
  std::uint64_t seed = 0;
};

struct ResultVersion {
  int version = 0;
  double alpha = kDefaultAlpha;
  std::size_t exemplar_index = 0;
  SelectionMethod method = SelectionMethod::fiq;
  std::size_t frame_count = 0;
};

struct ServiceOptions {
  BackendSpec candidate_backend{"palette", {}, 600.0};
  BackendSpec propagator_backend{"lut", {}, 600.0};
  ScorerSpec scorer;
};

// Writer exclusion that, unlike std::mutex, may be released by a thread
// other than the one that acquired it (async jobs inherit the request's lock).
class WriterGate {
 public:
  void acquire() {
    std::unique_lock lk(m_);
    cv_.wait(lk, [this] { return !held_; });
    held_ = true;
  }
  void release() {
    {
      std::lock_guard lk(m_);
      held_ = false;
    }
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  bool held_ = false;
};

class WriterLock {
 public:
  explicit WriterLock(WriterGate& g) : gate_(&g) { gate_->acquire(); }
  WriterLock(WriterLock&& o) noexcept : gate_(std::exchange(o.gate_, nullptr)) {}
  WriterLock& operator=(WriterLock&&) = delete;
  ~WriterLock() { unlock(); }
  void unlock() {
    if (gate_) std::exchange(gate_, nullptr)->release();
  }

 private:
  WriterGate* gate_;
};

struct Session {
  std::string id;
  fs::path clip_manifest;
  fs::path dir;

  // Committed state, guarded by state_mu.
  SessionState state = SessionState::created;
  bool busy = false;
  std::vector<CaptionRequest> caption_history;
  std::optional<CandidateSet> candidates;
  std::optional<ExemplarChoice> choice;
  std::vector<ResultVersion> results;
  json history = json::array();
  json failure = nullptr;

  WriterGate write_gate;
  mutable std::shared_mutex state_mu;
};

// Replays a session's recorded mutations from scratch and returns every
// result clip in version order.
inline std::vector<Clip> replay_history(const json& history, const Clip& gray, const ServiceOptions& opts,
                                        const fs::path& scratch) {
  std::optional<CandidateSet> cands;
  std::optional<ExemplarChoice> choice;
  std::vector<Clip> out;
  auto scorer = detail::make_scorer(opts.scorer);
  for (const json& ev : history) {
    const std::string op = ev.at("op").get<std::string>();
    if (op == "caption") {
      const auto caption = ev.at("caption").get<std::string>();
      const auto n = ev.at("candidate_count").get<std::size_t>();
      const auto seed = ev.at("seed").get<std::uint64_t>();
      cands = opts.candidate_backend.external()
                  ? run_external_generator(gray.frames.front(), caption, n, seed, scratch / "generator",
                                           opts.candidate_backend.to_command())
                  : palette_colorize(gray.frames.front(), caption, n, seed);
      choice = select_exemplar(*cands, *scorer);
    } else if (op == "exemplar") {
      choice = apply_override(*choice, *cands, ev.at("index").get<std::size_t>());
    } else if (op == "propagate") {
      const double alpha = ev.at("alpha").get<double>();
      out.push_back(opts.propagator_backend.external()
                        ? run_external_propagator(gray, choice->exemplar, scratch / "propagator",
                                                  opts.propagator_backend.to_command())
                        : exemplar_propagate(gray, choice->exemplar, alpha));
    }
  }
  return out;
}

class ControlService {
 public:
  explicit ControlService(fs::path data_root, ServiceOptions opts = {})
      : root_(std::move(data_root)), opts_(std::move(opts)) {
    fs::create_directories(root_ / "sessions");
    rehydrate();
  }

  ~ControlService() { join_workers(); }

  ControlService(const ControlService&) = delete;
  ControlService& operator=(const ControlService&) = delete;

  // Blocks until every asynchronous job has finished.
  void join_workers() {
    std::vector<std::thread> ts;
    {
      std::lock_guard lk(workers_mu_);
      ts.swap(workers_);
    }
    for (auto& t : ts)
      if (t.joinable()) t.join();
  }

  // --- operations (throw HttpError) --------------------------------------

  json create_session(const json& body) {
    if (!body.is_object() || !body.contains("clip_manifest") || !body["clip_manifest"].is_string()) {
      throw HttpError(422, "body must contain a string clip_manifest");
    }
    const fs::path manifest = fs::absolute(body["clip_manifest"].get<std::string>());
    try {
      load_inputs(manifest);
    } catch (const std::exception& e) {
      throw HttpError(422, std::string("clip does not load: ") + e.what());
    }
    auto s = std::make_shared<Session>();
    {
      std::lock_guard lk(sessions_mu_);
      s->id = std::to_string(++last_id_);
      s->dir = root_ / "sessions" / s->id;
      s->clip_manifest = manifest;
      sessions_[s->id] = s;
    }
    fs::create_directories(s->dir);
    {
      std::unique_lock wl(s->state_mu);
      s->history.push_back({{"op", "create"}, {"clip_manifest", manifest.string()}});
      persist(*s);
    }
    return describe(*s);
  }

  json list_sessions() const {
    json arr = json::array();
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lk(sessions_mu_);
      for (const auto& [id, s] : sessions_) all.push_back(s);
    }
    for (const auto& s : all) {
      std::shared_lock rl(s->state_mu);
      arr.push_back({{"id", s->id}, {"state", to_string(s->state)}, {"busy", s->busy}});
    }
    return {{"sessions", arr}};
  }

  json get_session(const std::string& id) const {
    auto s = find(id);
    std::shared_lock rl(s->state_mu);
    return describe_locked(*s);
  }

  // Returns {status, body}: 200 with the candidate list, or 202 when async.
  std::pair<int, json> post_caption(const std::string& id, const json& body) {
    auto s = find(id);
    CaptionRequest req;
    bool async = false;
    try {
      if (!body.is_object()) throw json::type_error::create(302, "body must be an object", nullptr);
      req.caption = body.at("caption").get<std::string>();
      req.candidate_count = body.value("candidate_count", std::size_t{8});
      req.seed = body.value("seed", std::uint64_t{0});
      async = body.value("async", false);
    } catch (const json::exception& e) {
      throw HttpError(422, std::string("invalid caption body: ") + e.what());
    }
    if (req.candidate_count < 1 || req.candidate_count > 64) throw HttpError(422, "candidate_count must be in [1,64]");

    WriterLock writer(s->write_gate);
    // Captions are accepted in every state; a new caption returns to candidates_ready.
    auto job = [this, s, req] { run_caption(*s, req); };
    if (async) return {202, start_async(s, std::move(writer), job, "caption")};
    job();
    std::shared_lock rl(s->state_mu);
    if (s->state == SessionState::failed) return {200, describe_locked(*s)};
    return {200, candidates_locked(*s)};
  }

  json post_exemplar(const std::string& id, const json& body) {
    auto s = find(id);
    std::size_t index = 0;
    try {
      if (!body.is_object()) throw json::type_error::create(302, "body must be an object", nullptr);
      const json& v = body.at("index");
      if (!v.is_number_integer() || v.get<long long>() < 0) throw HttpError(422, "index must be a non-negative integer");
      index = v.get<std::size_t>();
    } catch (const json::exception& e) {
      throw HttpError(422, std::string("invalid exemplar body: ") + e.what());
    }
    WriterLock writer(s->write_gate);
    if (!s->candidates || !s->choice) throw HttpError(409, "no candidates yet; post a caption first");
    if (index >= s->candidates->size()) {
      throw HttpError(422, "index " + std::to_string(index) + " out of range for " +
                               std::to_string(s->candidates->size()) + " candidates");
    }
    const ExemplarChoice c = apply_override(*s->choice, *s->candidates, index);
    {
      std::unique_lock wl(s->state_mu);
      s->choice = c;
      s->state = SessionState::candidates_ready;
      s->failure = nullptr;
      s->history.push_back({{"op", "exemplar"}, {"index", index}});
      persist(*s);
    }
    std::shared_lock rl(s->state_mu);
    json j = to_json(*s->choice);
    j["state"] = to_string(s->state);
    return j;
  }

  std::pair<int, json> post_propagate(const std::string& id, const json& body) {
    auto s = find(id);
    double alpha = kDefaultAlpha;
    bool async = false;
    try {
      if (!body.is_null() && !body.is_object()) throw json::type_error::create(302, "body must be an object", nullptr);
      if (body.is_object()) {
        alpha = body.value("alpha", kDefaultAlpha);
        async = body.value("async", false);
      }
    } catch (const json::exception& e) {
      throw HttpError(422, std::string("invalid propagate body: ") + e.what());
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw HttpError(422, "alpha must lie in [0,1]");
    WriterLock writer(s->write_gate);
    if (!s->choice) throw HttpError(409, "no exemplar chosen; post a caption first");
    auto job = [this, s, alpha] { run_propagate(*s, alpha); };
    if (async) return {202, start_async(s, std::move(writer), job, "propagate")};
    job();
    std::shared_lock rl(s->state_mu);
    if (s->state == SessionState::failed) return {200, describe_locked(*s)};
    return {200, result_locked(*s, s->results.back().version)};
  }

  json get_candidates(const std::string& id) const {
    auto s = find(id);
    std::shared_lock rl(s->state_mu);
    if (!s->candidates) throw HttpError(409, "no candidates yet");
    return candidates_locked(*s);
  }

  json get_result(const std::string& id, int version) const {
    auto s = find(id);
    std::shared_lock rl(s->state_mu);
    return result_locked(*s, version);
  }

  json get_metrics(const std::string& id) const {
    auto s = find(id);
    std::vector<ResultVersion> results;
    {
      std::shared_lock rl(s->state_mu);
      results = s->results;
    }
    const Inputs in = load_inputs(s->clip_manifest);
    if (!in.truth) throw HttpError(409, "clip has no ground truth");
    MetricReport report;
    report.dataset = in.name;
    for (const auto& r : results) {
      const Clip out = load_result(*s, r);
      report.rows.push_back(evaluate_clips(out, *in.truth, "v" + std::to_string(r.version) + " " + to_string(r.method)));
    }
    json j = to_json(report);
    std::shared_lock rl(s->state_mu);
    j["state"] = to_string(s->state);
    return j;
  }

  std::vector<std::uint8_t> frame_png(const std::string& id, const std::string& kind, int a, int b = -1) const {
    auto s = find(id);
    std::shared_lock rl(s->state_mu);
    if (kind == "candidate") {
      if (!s->candidates || a < 0 || static_cast<std::size_t>(a) >= s->candidates->size()) {
        throw HttpError(404, "no candidate " + std::to_string(a));
      }
      return encode_png(s->candidates->candidates[static_cast<std::size_t>(a)]);
    }
    if (kind == "result") {
      const ResultVersion& r = version_locked(*s, a);
      if (b < 0 || static_cast<std::size_t>(b) >= r.frame_count) throw HttpError(404, "no frame " + std::to_string(b));
      return read_file_bytes(result_dir(*s, r.version) / frame_filename(static_cast<std::size_t>(b)));
    }
    rl.unlock();
    const Inputs in = load_inputs(s->clip_manifest);
    const Clip* clip = kind == "input" ? &in.gray : kind == "truth" && in.truth ? &*in.truth : nullptr;
    if (!clip) throw HttpError(404, "no " + kind + " frames");
    if (a < 0 || static_cast<std::size_t>(a) >= clip->size()) throw HttpError(404, "no frame " + std::to_string(a));
    return encode_png(clip->frames[static_cast<std::size_t>(a)]);
  }

  // Result clip as stored on disk.
  Clip result_clip(const std::string& id, int version) const {
    auto s = find(id);
    ResultVersion r;
    {
      std::shared_lock rl(s->state_mu);
      r = version_locked(*s, version);
    }
    return load_result(*s, r);
  }

  json history(const std::string& id) const {
    auto s = find(id);
    std::shared_lock rl(s->state_mu);
    return s->history;
  }

  const ServiceOptions& options() const noexcept { return opts_; }

  struct Inputs {
    std::string name;
    Clip gray;
    std::optional<Clip> truth;
  };

  // The grayscale working clip plus ground truth; colour inputs are
  // desaturated and become their own ground truth.
  static Inputs load_inputs(const fs::path& manifest_path) {
    const ClipManifest m = read_manifest(manifest_path);
    Inputs in{m.name, load_clip(m), load_ground_truth(m)};
    const bool colour = std::any_of(in.gray.frames.begin(), in.gray.frames.end(),
                                    [](const Frame& f) { return !f.is_grayscale(); });
    if (colour) {
      if (!in.truth) in.truth = in.gray;
      for (Frame& f : in.gray.frames) f = desaturate(f);
    }
    return in;
  }

  // --- HTTP wiring ---------------------------------------------------------

  void bind(httplib::Server& svr) {
    auto guard = [](httplib::Response& res, auto&& fn) {
      try {
        fn();
      } catch (const HttpError& e) {
        send_json(res, e.status(), {{"error", e.what()}});
      } catch (const std::exception& e) {
        send_json(res, 500, {{"error", e.what()}});
      }
    };
    auto body_of = [](const httplib::Request& req) -> json {
      if (req.body.empty()) return nullptr;
      try {
        return json::parse(req.body);
      } catch (const json::exception& e) {
        throw HttpError(422, std::string("body is not JSON: ") + e.what());
      }
    };

    svr.Post("/sessions", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { send_json(res, 201, create_session(body_of(req))); });
    });
    svr.Get("/sessions", [=, this](const httplib::Request&, httplib::Response& res) {
      guard(res, [&] { send_json(res, 200, list_sessions()); });
    });
    svr.Get(R"(/sessions/(\d+))", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { send_json(res, 200, get_session(req.matches[1])); });
    });
    svr.Post(R"(/sessions/(\d+)/caption)", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        auto [status, j] = post_caption(req.matches[1], body_of(req));
        send_json(res, status, j);
      });
    });
    svr.Post(R"(/sessions/(\d+)/exemplar)", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { send_json(res, 200, post_exemplar(req.matches[1], body_of(req))); });
    });
    svr.Post(R"(/sessions/(\d+)/propagate)", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] {
        auto [status, j] = post_propagate(req.matches[1], body_of(req));
        send_json(res, status, j);
      });
    });
    svr.Get(R"(/sessions/(\d+)/candidates)", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { send_json(res, 200, get_candidates(req.matches[1])); });
    });
    svr.Get(R"(/sessions/(\d+)/result/(\d+))", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { send_json(res, 200, get_result(req.matches[1], std::stoi(req.matches[2]))); });
    });
    svr.Get(R"(/sessions/(\d+)/metrics)", [=, this](const httplib::Request& req, httplib::Response& res) {
      guard(res, [&] { send_json(res, 200, get_metrics(req.matches[1])); });
    });
    svr.Get(R"(/sessions/(\d+)/frames/(input|truth|candidate)/(\d+))",
            [=, this](const httplib::Request& req, httplib::Response& res) {
              guard(res, [&] { send_png(res, frame_png(req.matches[1], req.matches[2], std::stoi(req.matches[3]))); });
            });
    svr.Get(R"(/sessions/(\d+)/frames/result/(\d+)/(\d+))",
            [=, this](const httplib::Request& req, httplib::Response& res) {
              guard(res, [&] {
                send_png(res, frame_png(req.matches[1], "result", std::stoi(req.matches[2]), std::stoi(req.matches[3])));
              });
            });
  }

 private:
  static void send_json(httplib::Response& res, int status, const json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void send_png(httplib::Response& res, const std::vector<std::uint8_t>& bytes) {
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  std::shared_ptr<Session> find(const std::string& id) const {
    std::lock_guard lk(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw HttpError(404, "unknown session '" + id + "'");
    return it->second;
  }

  json start_async(const std::shared_ptr<Session>& s, WriterLock writer,
                   std::function<void()> job, const std::string& name) {
    {
      std::unique_lock wl(s->state_mu);
      s->busy = true;
    }
    auto lock = std::make_shared<WriterLock>(std::move(writer));
    std::lock_guard lk(workers_mu_);
    workers_.emplace_back([s, lock, job = std::move(job)] {
      job();
      {
        std::unique_lock wl(s->state_mu);
        s->busy = false;
      }
      lock->unlock();
    });
    std::shared_lock rl(s->state_mu);
    json j = describe_locked(*s);
    j["job"] = name;
    return j;
  }

  // Both jobs run with the session's writer lock held.
  void run_caption(Session& s, const CaptionRequest& req) {
    const json event = {{"op", "caption"}, {"caption", req.caption}, {"candidate_count", req.candidate_count},
                        {"seed", req.seed}};
    try {
      const Inputs in = load_inputs(s.clip_manifest);
      CandidateSet cands = opts_.candidate_backend.external()
                               ? run_external_generator(in.gray.frames.front(), req.caption, req.candidate_count,
                                                        req.seed, s.dir / "work" / "generator",
                                                        opts_.candidate_backend.to_command())
                               : palette_colorize(in.gray.frames.front(), req.caption, req.candidate_count, req.seed);
      auto scorer = detail::make_scorer(opts_.scorer);
      ExemplarChoice c = select_exemplar(cands, *scorer);
      const fs::path dir = s.dir / "candidates";
      detail::reset_dir(dir);
      for (std::size_t k = 0; k < cands.size(); ++k) write_png(dir / candidate_filename(k), cands.candidates[k]);
      std::unique_lock wl(s.state_mu);
      s.caption_history.push_back(req);
      s.candidates = std::move(cands);
      s.choice = std::move(c);
      s.state = SessionState::candidates_ready;
      s.failure = nullptr;
      s.history.push_back(event);
      persist(s);
    } catch (const std::exception& e) {
      fail(s, "generate_candidates", e.what(), event);
    }
  }

  void run_propagate(Session& s, double alpha) {
    const json event_base = {{"op", "propagate"}, {"alpha", alpha}};
    try {
      const Inputs in = load_inputs(s.clip_manifest);
      const Clip out = opts_.propagator_backend.external()
                           ? run_external_propagator(in.gray, s.choice->exemplar, s.dir / "work" / "propagator",
                                                     opts_.propagator_backend.to_command())
                           : exemplar_propagate(in.gray, s.choice->exemplar, alpha);
      const int version = s.results.empty() ? 1 : s.results.back().version + 1;
      save_clip(out, result_dir(s, version), "v" + std::to_string(version));
      ResultVersion r{version, alpha, s.choice->index, s.choice->method, out.size()};
      json event = event_base;
      event["version"] = version;
      std::unique_lock wl(s.state_mu);
      s.results.push_back(r);
      s.state = SessionState::propagated;
      s.failure = nullptr;
      s.history.push_back(event);
      persist(s);
    } catch (const std::exception& e) {
      fail(s, "propagate", e.what(), event_base);
    }
  }

  void fail(Session& s, const std::string& stage, const std::string& msg, json event) {
    std::unique_lock wl(s.state_mu);
    s.state = SessionState::failed;
    s.failure = {{"stage", stage}, {"message", msg}};
    event["failed"] = true;
    s.history.push_back(event);
    persist(s);
  }

  static fs::path result_dir(const Session& s, int version) {
    return s.dir / "results" / ("v" + std::to_string(version));
  }

  static const ResultVersion& version_locked(const Session& s, int version) {
    for (const auto& r : s.results)
      if (r.version == version) return r;
    throw HttpError(404, "no result version " + std::to_string(version));
  }

  static Clip load_result(const Session& s, const ResultVersion& r) {
    return load_clip(read_manifest(result_dir(s, r.version) / "clip.json"));
  }

  static json result_json(const ResultVersion& r) {
    return {{"version", r.version},
            {"alpha", r.alpha},
            {"exemplar_index", r.exemplar_index},
            {"method", to_string(r.method)},
            {"frame_count", r.frame_count}};
  }

  json result_locked(const Session& s, int version) const {
    const ResultVersion& r = version_locked(s, version);
    json j = result_json(r);
    json frames = json::array();
    for (std::size_t t = 0; t < r.frame_count; ++t) {
      frames.push_back("/sessions/" + s.id + "/frames/result/" + std::to_string(r.version) + "/" + std::to_string(t));
    }
    j["frames"] = frames;
    j["state"] = to_string(s.state);
    return j;
  }

  json candidates_locked(const Session& s) const {
    json arr = json::array();
    for (std::size_t k = 0; k < s.candidates->size(); ++k) {
      arr.push_back({{"index", k},
                     {"raw_score", s.choice->raw_scores[k]},
                     {"normalized_score", s.choice->normalized_scores[k]},
                     {"seed", k < s.candidates->seeds.size() ? json(s.candidates->seeds[k]) : json(nullptr)},
                     {"frame", "/sessions/" + s.id + "/frames/candidate/" + std::to_string(k)}});
    }
    return {{"state", to_string(s.state)},
            {"source", s.candidates->source},
            {"candidates", arr},
            {"exemplar_choice", to_json(*s.choice)}};
  }

  json describe(const Session& s) const {
    std::shared_lock rl(s.state_mu);
    return describe_locked(s);
  }

  json describe_locked(const Session& s) const {
    json captions = json::array();
    for (const auto& c : s.caption_history) {
      captions.push_back({{"caption", c.caption}, {"candidate_count", c.candidate_count}, {"seed", c.seed}});
    }
    json results = json::array();
    for (const auto& r : s.results) results.push_back(result_json(r));
    return {{"id", s.id},
            {"clip_manifest", s.clip_manifest.string()},
            {"state", to_string(s.state)},
            {"busy", s.busy},
            {"caption_history", captions},
            {"exemplar_choice", s.choice ? to_json(*s.choice) : json(nullptr)},
            {"candidate_count", s.candidates ? json(s.candidates->size()) : json(nullptr)},
            {"results", results},
            {"failure", s.failure},
            {"history", s.history}};
  }

  // Caller holds state_mu exclusively (or is the only owner).
  void persist(const Session& s) const {
    json j = describe_locked(s);
    j.erase("busy");
    if (s.candidates) {
      j["candidate_source"] = s.candidates->source;
      j["candidate_seeds"] = s.candidates->seeds;
    }
    const fs::path tmp = s.dir / "session.json.tmp";
    write_json_file(tmp, j);
    fs::rename(tmp, s.dir / "session.json");
  }

  void rehydrate() {
    for (const auto& e : fs::directory_iterator(root_ / "sessions")) {
      const fs::path file = e.path() / "session.json";
      if (!e.is_directory() || !fs::exists(file)) continue;
      try {
        const json j = read_json_file(file);
        auto s = std::make_shared<Session>();
        s->id = j.at("id").get<std::string>();
        s->dir = e.path();
        s->clip_manifest = j.at("clip_manifest").get<std::string>();
        s->state = session_state_from_string(j.at("state").get<std::string>());
        for (const auto& c : j.at("caption_history")) {
          s->caption_history.push_back({c.at("caption").get<std::string>(), c.at("candidate_count").get<std::size_t>(),
                                        c.at("seed").get<std::uint64_t>()});
        }
        if (!j.at("candidate_count").is_null()) {
          CandidateSet cs;
          const auto n = j["candidate_count"].get<std::size_t>();
          for (std::size_t k = 0; k < n; ++k) cs.candidates.push_back(read_png(s->dir / "candidates" / candidate_filename(k)));
          cs.source = j.value("candidate_source", std::string{});
          if (j.contains("candidate_seeds")) cs.seeds = j["candidate_seeds"].get<std::vector<std::uint64_t>>();
          s->candidates = std::move(cs);
        }
        if (!j.at("exemplar_choice").is_null()) {
          s->choice = exemplar_choice_from_json(j["exemplar_choice"], s->candidates ? &*s->candidates : nullptr);
        }
        for (const auto& r : j.at("results")) {
          s->results.push_back({r.at("version").get<int>(), r.at("alpha").get<double>(),
                                r.at("exemplar_index").get<std::size_t>(),
                                selection_method_from_string(r.at("method").get<std::string>()),
                                r.at("frame_count").get<std::size_t>()});
        }
        s->history = j.at("history");
        s->failure = j.value("failure", json(nullptr));
        last_id_ = std::max(last_id_, std::stoull(s->id));
        sessions_[s->id] = s;
      } catch (const std::exception& ex) {
        log::warn("skipping session " + e.path().string() + ": " + ex.what());
      }
    }
  }

  fs::path root_;
  ServiceOptions opts_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  unsigned long long last_id_ = 0;
  std::mutex workers_mu_;
  std::vector<std::thread> workers_;
};

}  // namespace controlcol
