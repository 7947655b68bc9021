#include "herdid/service.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>

#include "herdid/error.hpp"
#include "herdid/fs_util.hpp"
#include "herdid/image.hpp"
#include "herdid/json.hpp"
#include "herdid/manifest.hpp"

namespace herdid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string random_id(const char* prefix) {
  static std::mutex mutex;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mutex);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%s%016llx", prefix, static_cast<unsigned long long>(rng()));
  return buf;
}

ApiResponse fail(int status, const std::string& message) { return {status, json{{"error", message}}}; }

// Ids become file names; keep them to a safe alphabet.
bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
  }) && id.find("..") == std::string::npos;
}

struct Session {
  std::string id;
  std::string created;
  std::vector<std::pair<std::string, BoundingBox>> items;
  std::optional<Ranking> ranking;
  int model_version = 0;
  std::optional<std::string> confirmation;
};

json session_json(const Session& s) {
  json items = json::array();
  for (const auto& [img, box] : s.items) items.push_back({{"image_id", img}, {"box", box}});
  json j{{"session_id", s.id},
         {"created", s.created},
         {"items", items},
         {"model_version", s.model_version},
         {"ranking", s.ranking ? json(*s.ranking) : json(nullptr)},
         {"confirmation", s.confirmation ? json(*s.confirmation) : json(nullptr)}};
  return j;
}

Session session_from_json(const json& j) {
  Session s;
  s.id = j.at("session_id").get<std::string>();
  s.created = j.value("created", "");
  for (const auto& it : j.at("items")) s.items.emplace_back(it.at("image_id").get<std::string>(), it.at("box").get<BoundingBox>());
  s.model_version = j.value("model_version", 0);
  if (!j.at("ranking").is_null()) {
    Ranking r;
    r.query_image_count = j.at("ranking").at("query_image_count").get<int>();
    for (const auto& c : j.at("ranking").at("candidates")) {
      r.candidates.push_back({c.at("individual_id").get<std::string>(), c.at("confidence").get<double>()});
    }
    s.ranking = std::move(r);
  }
  if (!j.at("confirmation").is_null()) s.confirmation = j.at("confirmation").get<std::string>();
  return s;
}

struct Snapshot {
  int version = 0;
  ModelArchive model;
  std::shared_ptr<const EmbeddingBackend> backend;
};

struct Job {
  std::string id;
  std::string status = "queued";
  std::optional<int> model_version;
  std::string error;
  std::string submitted;
};

json job_json(const Job& j) {
  return {{"job_id", j.id},
          {"status", j.status},
          {"model_version", j.model_version ? json(*j.model_version) : json(nullptr)},
          {"error", j.error.empty() ? json(nullptr) : json(j.error)},
          {"submitted", j.submitted}};
}

}  // namespace

struct Service::Impl {
  ServiceConfig config;
  fs::path images_dir, models_dir, sessions_dir, confirmations_dir;

  std::shared_ptr<const EmbeddingBackend> base_backend;
  std::unique_ptr<DetectorBackend> detector;

  mutable std::mutex snapshot_mutex;
  std::shared_ptr<const Snapshot> snapshot;

  mutable std::mutex images_mutex;
  std::map<std::string, fs::path> images;

  std::mutex sessions_mutex;
  std::map<std::string, Session> sessions;

  std::mutex jobs_mutex;
  std::condition_variable jobs_cv;
  std::map<std::string, Job> jobs;
  bool training = false;
  int job_counter = 0;
  std::jthread trainer;

  httplib::Server server;
  std::atomic<bool> bound{false};

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    if (config.data_dir.empty()) throw Error(ErrorCode::kInvalidArgument, "service needs a data directory");
    images_dir = config.data_dir / "images";
    models_dir = config.data_dir / "models";
    sessions_dir = config.data_dir / "sessions";
    confirmations_dir = config.data_dir / "confirmations";
    for (const auto& d : {images_dir, models_dir, sessions_dir, confirmations_dir}) fs::create_directories(d);

    base_backend = make_embedding_backend(config.backend_kind, config.backend);
    if (config.detector_kind == "stub") {
      detector = std::make_unique<StubDetector>();
    } else if (config.detector_kind == "onnx") {
      detector = std::make_unique<OnnxDetector>(config.detector);
    } else if (config.detector_kind != "none") {
      throw Error(ErrorCode::kInvalidArgument, "unknown detector kind '" + config.detector_kind + "'");
    }

    for (const auto& entry : fs::directory_iterator(images_dir)) {
      if (entry.is_regular_file() && entry.path().filename().string().find(".tmp") == std::string::npos) {
        images[entry.path().stem().string()] = entry.path();
      }
    }
    for (const auto& entry : fs::directory_iterator(sessions_dir)) {
      if (entry.path().extension() != ".json") continue;
      try {
        Session s = session_from_json(json::parse(read_file(entry.path())));
        sessions[s.id] = std::move(s);
      } catch (const std::exception&) {
        // Unreadable session files are ignored; they are never half-written.
      }
    }
    load_current_model();
    if (!snapshot && config.initial_model) install_model(load_archive(*config.initial_model));
  }

  void commit(const fs::path& path, const std::string& bytes) {
    atomic_write_file(path, bytes, [&] {
      if (config.before_commit) config.before_commit(path);
    });
  }

  void load_current_model() {
    const fs::path current = models_dir / "CURRENT";
    if (!fs::exists(current)) return;
    const int version = std::stoi(read_file(current));
    auto snap = std::make_shared<Snapshot>();
    snap->version = version;
    snap->model = load_archive(models_dir / ("model-" + std::to_string(version) + ".eid"));
    snap->backend = backend_for(*base_backend, snap->model.config);
    std::lock_guard lock(snapshot_mutex);
    snapshot = std::move(snap);
  }

  int install_model(ModelArchive model) {
    auto snap = std::make_shared<Snapshot>();
    snap->backend = backend_for(*base_backend, model.config);
    {
      std::lock_guard lock(snapshot_mutex);
      snap->version = (snapshot ? snapshot->version : 0) + 1;
    }
    snap->model = std::move(model);
    commit(models_dir / ("model-" + std::to_string(snap->version) + ".eid"), serialize_archive(snap->model));
    commit(models_dir / "CURRENT", std::to_string(snap->version) + "\n");
    std::lock_guard lock(snapshot_mutex);
    snapshot = std::move(snap);
    return snapshot->version;
  }

  std::shared_ptr<const Snapshot> current() const {
    std::lock_guard lock(snapshot_mutex);
    return snapshot;
  }

  std::optional<fs::path> image_path(const std::string& id) const {
    std::lock_guard lock(images_mutex);
    auto it = images.find(id);
    if (it == images.end()) return std::nullopt;
    return it->second;
  }

  void save_session(const Session& s) { commit(sessions_dir / (s.id + ".json"), session_json(s).dump(2)); }

  json candidate_json(const Snapshot& snap, const RankedCandidate& c) const {
    const Individual* ind = snap.model.find_individual(c.individual_id);
    json reps = json::array();
    if (ind) {
      const auto n = std::min<std::size_t>(ind->representative_image_ids.size(),
                                           static_cast<std::size_t>(std::max(0, config.representatives)));
      for (std::size_t i = 0; i < n; ++i) {
        const auto& img = ind->representative_image_ids[i];
        reps.push_back({{"image_id", img}, {"url", "/media/gallery/" + img}});
      }
    }
    return {{"individual_id", c.individual_id},
            {"name", ind ? ind->name : c.individual_id},
            {"confidence", c.confidence},
            {"representatives", reps}};
  }

  void run_job(std::string job_id, fs::path manifest_path, PipelineConfig cfg) {
    {
      std::lock_guard lock(jobs_mutex);
      jobs[job_id].status = "running";
    }
    std::optional<int> version;
    std::string error;
    try {
      const DatasetManifest manifest = load_manifest(manifest_path);
      ModelArchive model = train_pipeline(manifest, cfg, *base_backend, nullptr, detector.get());
      version = install_model(std::move(model));
    } catch (const std::exception& ex) {
      error = ex.what();
    }
    std::lock_guard lock(jobs_mutex);
    Job& job = jobs[job_id];
    job.status = version ? "done" : "failed";
    job.model_version = version;
    job.error = error;
    training = false;
    jobs_cv.notify_all();
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() {
  stop();
  wait_for_training();
}

int Service::model_version() const {
  const auto snap = impl_->current();
  return snap ? snap->version : 0;
}

void Service::wait_for_training() {
  std::unique_lock lock(impl_->jobs_mutex);
  impl_->jobs_cv.wait(lock, [&] { return !impl_->training; });
}

ApiResponse Service::upload(std::string_view bytes) {
  if (bytes.size() > impl_->config.max_upload_bytes) {
    return fail(413, "image exceeds " + std::to_string(impl_->config.max_upload_bytes) + " bytes");
  }
  RgbImage image;
  try {
    image = decode_image(bytes);
  } catch (const Error& ex) {
    return fail(415, ex.what());
  }
  const std::string id = sha256_hex(bytes);
  if (!impl_->image_path(id)) {
    const fs::path path = impl_->images_dir / (id + sniff_image_extension(bytes));
    impl_->commit(path, std::string(bytes));
    std::lock_guard lock(impl_->images_mutex);
    impl_->images[id] = path;
  }
  return {200, json{{"image_id", id}, {"width", image.width}, {"height", image.height}, {"url", "/media/uploads/" + id}}};
}

ApiResponse Service::detect(const std::string& image_id) {
  const auto path = impl_->image_path(image_id);
  if (!path) return fail(404, "unknown image '" + image_id + "'");
  if (!impl_->detector) return fail(503, "no detector configured");
  const auto dets = impl_->detector->detect_heads(load_image(*path));
  json out = json::array();
  for (const auto& d : dets) {
    json box = d.box;
    box["score"] = d.score;
    out.push_back(box);
  }
  return {200, json{{"image_id", image_id}, {"detector", impl_->detector->kind()}, {"detections", out}}};
}

ApiResponse Service::create_session() {
  Session s;
  s.id = random_id("s-");
  s.created = utc_now();
  impl_->save_session(s);
  std::lock_guard lock(impl_->sessions_mutex);
  impl_->sessions[s.id] = s;
  return {201, session_json(s)};
}

ApiResponse Service::get_session(const std::string& session_id) {
  std::lock_guard lock(impl_->sessions_mutex);
  auto it = impl_->sessions.find(session_id);
  if (it == impl_->sessions.end()) return fail(404, "unknown session '" + session_id + "'");
  return {200, session_json(it->second)};
}

ApiResponse Service::identify(const json& request) {
  const auto snap = impl_->current();
  if (!snap) return fail(409, "no model has been trained yet");
  if (!request.is_object() || !request.contains("items") || !request.at("items").is_array() ||
      request.at("items").empty()) {
    return fail(422, "request needs a non-empty 'items' array");
  }

  std::vector<std::pair<std::string, BoundingBox>> items;
  std::vector<Query> queries;
  for (const auto& item : request.at("items")) {
    if (!item.is_object() || !item.contains("image_id") || !item.at("image_id").is_string()) {
      return fail(422, "every item needs an 'image_id'");
    }
    const auto id = item.at("image_id").get<std::string>();
    BoundingBox box = full_image_box();
    if (item.contains("box") && !item.at("box").is_null()) {
      try {
        box = item.at("box").get<BoundingBox>();
      } catch (const std::exception& ex) {
        return fail(422, std::string("malformed box: ") + ex.what());
      }
      if (!box.valid()) return fail(422, "invalid box for image '" + id + "'");
    }
    const auto path = impl_->image_path(id);
    if (!path) return fail(404, "unknown image '" + id + "'");
    queries.push_back({load_image(*path), box});
    items.emplace_back(id, box);
  }

  Session session;
  const bool has_session = request.contains("session_id") && request.at("session_id").is_string();
  if (has_session) {
    std::lock_guard lock(impl_->sessions_mutex);
    auto it = impl_->sessions.find(request.at("session_id").get<std::string>());
    if (it == impl_->sessions.end()) return fail(404, "unknown session");
    session = it->second;
  } else {
    session.id = random_id("s-");
    session.created = utc_now();
  }

  const Ranking ranking = herdid::identify(snap->model, queries, *snap->backend);
  session.items = items;
  session.ranking = ranking;
  session.model_version = snap->version;
  session.confirmation.reset();
  impl_->save_session(session);
  {
    std::lock_guard lock(impl_->sessions_mutex);
    impl_->sessions[session.id] = session;
  }

  json candidates = json::array();
  for (const auto& c : top_k(ranking, std::max(1, impl_->config.top_n))) {
    candidates.push_back(impl_->candidate_json(*snap, c));
  }
  return {200, json{{"session_id", session.id},
                    {"model_version", snap->version},
                    {"query_image_count", ranking.query_image_count},
                    {"candidates", candidates}}};
}

ApiResponse Service::confirm(const json& request) {
  if (!request.is_object()) return fail(422, "expected a JSON object");
  if (!request.contains("individual_id") || !request.at("individual_id").is_string()) {
    return fail(422, "missing 'individual_id'");
  }
  if (!request.contains("session_id") || !request.at("session_id").is_string()) {
    return fail(409, "no ranking exists for this request; identify first");
  }
  const auto session_id = request.at("session_id").get<std::string>();
  const auto individual = request.at("individual_id").get<std::string>();

  Session session;
  {
    std::lock_guard lock(impl_->sessions_mutex);
    auto it = impl_->sessions.find(session_id);
    if (it == impl_->sessions.end()) return fail(404, "unknown session '" + session_id + "'");
    session = it->second;
  }
  if (!session.ranking) return fail(409, "session has no ranking yet; identify first");
  if (individual != kUnknownIndividual && rank_of(*session.ranking, individual) == 0) {
    return fail(404, "unknown individual '" + individual + "'");
  }

  json images = json::array();
  for (const auto& [img, box] : session.items) images.push_back({{"image_id", img}, {"box", box}});
  const std::string id = random_id("c-");
  json record{{"confirmation_id", id},
              {"session_id", session.id},
              {"images", images},
              {"individual_id", individual},
              {"model_version", session.model_version},
              {"rank", individual == kUnknownIndividual ? json(nullptr) : json(rank_of(*session.ranking, individual))},
              {"timestamp", utc_now()}};
  impl_->commit(impl_->confirmations_dir / (id + ".json"), record.dump(2));
  session.confirmation = individual;
  impl_->save_session(session);
  {
    std::lock_guard lock(impl_->sessions_mutex);
    impl_->sessions[session.id] = session;
  }
  return {201, record};
}

ApiResponse Service::list_confirmations() {
  std::vector<json> records;
  for (const auto& entry : fs::directory_iterator(impl_->confirmations_dir)) {
    if (entry.path().extension() != ".json") continue;
    records.push_back(json::parse(read_file(entry.path())));
  }
  std::sort(records.begin(), records.end(), [](const json& a, const json& b) {
    return std::make_pair(a.at("timestamp").get<std::string>(), a.at("confirmation_id").get<std::string>()) <
           std::make_pair(b.at("timestamp").get<std::string>(), b.at("confirmation_id").get<std::string>());
  });
  return {200, json{{"confirmations", records}}};
}

ApiResponse Service::list_individuals() {
  const auto snap = impl_->current();
  json out = json::array();
  if (snap) {
    for (const auto& ind : snap->model.gallery) {
      out.push_back({{"id", ind.id}, {"name", ind.name}, {"representative_image_ids", ind.representative_image_ids}});
    }
  }
  return {200, json{{"model_version", snap ? json(snap->version) : json(nullptr)}, {"individuals", out}}};
}

ApiResponse Service::get_individual(const std::string& id) {
  const auto snap = impl_->current();
  const Individual* ind = snap ? snap->model.find_individual(id) : nullptr;
  if (!ind) return fail(404, "unknown individual '" + id + "'");
  const auto counts = snap->model.summary.class_counts;
  const auto it = counts.find(id);
  json reps = json::array();
  for (const auto& img : ind->representative_image_ids) {
    reps.push_back({{"image_id", img}, {"url", "/media/gallery/" + img}});
  }
  return {200, json{{"id", ind->id},
                    {"name", ind->name},
                    {"train_images", it == counts.end() ? 0 : it->second},
                    {"representatives", reps},
                    {"model_version", snap->version}}};
}

ApiResponse Service::start_training(const json& request) {
  if (!request.is_object()) return fail(422, "expected a JSON object");
  fs::path manifest;
  if (request.contains("manifest")) {
    manifest = request.at("manifest").get<std::string>();
  } else if (impl_->config.train_manifest) {
    manifest = *impl_->config.train_manifest;
  } else {
    return fail(422, "no manifest given and no default configured");
  }
  PipelineConfig cfg;
  try {
    if (request.contains("config")) cfg = request.at("config").get<PipelineConfig>();
    cfg.validate();
  } catch (const std::exception& ex) {
    return fail(422, ex.what());
  }

  std::lock_guard lock(impl_->jobs_mutex);
  if (impl_->training) return fail(409, "a training job is already running");
  impl_->training = true;
  Job job;
  job.id = "job-" + std::to_string(++impl_->job_counter);
  job.submitted = utc_now();
  impl_->jobs[job.id] = job;
  if (impl_->trainer.joinable()) impl_->trainer.join();
  impl_->trainer = std::jthread([impl = impl_.get(), id = job.id, manifest, cfg] { impl->run_job(id, manifest, cfg); });
  return {202, job_json(job)};
}

ApiResponse Service::training_status(const std::string& job_id) {
  std::lock_guard lock(impl_->jobs_mutex);
  auto it = impl_->jobs.find(job_id);
  if (it == impl_->jobs.end()) return fail(404, "unknown job '" + job_id + "'");
  return {200, job_json(it->second)};
}

ApiResponse Service::report() {
  const fs::path path = impl_->config.data_dir / "report.json";
  if (!fs::exists(path)) return fail(404, "no evaluation report in the data directory");
  return {200, json::parse(read_file(path))};
}

ApiResponse Service::health() {
  const auto snap = impl_->current();
  return {200, json{{"status", "ok"},
                    {"model_version", snap ? json(snap->version) : json(nullptr)},
                    {"backend", impl_->base_backend->kind()},
                    {"detector", impl_->detector ? json(impl_->detector->kind()) : json(nullptr)}}};
}

std::optional<fs::path> Service::media_path(const std::string& kind, const std::string& id) const {
  if (!safe_id(id)) return std::nullopt;
  if (kind == "uploads") return impl_->image_path(id);
  if (kind == "gallery") {
    const auto snap = impl_->current();
    if (!snap) return std::nullopt;
    auto it = snap->model.gallery_images.find(id);
    if (it == snap->model.gallery_images.end() || !fs::exists(it->second)) return std::nullopt;
    return fs::path(it->second);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// HTTP front end

namespace {

void send(httplib::Response& res, const ApiResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

std::string content_type_for(const fs::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

}  // namespace

int Service::bind(const std::string& host, int port) {
  auto& svr = impl_->server;
  svr.set_payload_max_length(impl_->config.max_upload_bytes * 2 + 1024);

  auto guarded = [](auto handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, handler(req));
      } catch (const json::exception& ex) {
        send(res, fail(400, std::string("bad JSON: ") + ex.what()));
      } catch (const Error& ex) {
        const int status = ex.code() == ErrorCode::kNotFound ? 404
                           : ex.code() == ErrorCode::kInvalidBox ? 422
                           : ex.code() == ErrorCode::kUndecodableImage ? 415
                                                                         : 500;
        send(res, fail(status, ex.what()));
      } catch (const std::exception& ex) {
        send(res, fail(500, ex.what()));
      }
    };
  };
  auto body_json = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };

  svr.Post("/api/v1/images", guarded([this](const httplib::Request& req) { return upload(req.body); }));
  svr.Post(R"(/api/v1/images/([^/]+)/detect)",
           guarded([this](const httplib::Request& req) { return detect(req.matches[1].str()); }));
  svr.Post("/api/v1/sessions", guarded([this](const httplib::Request&) { return create_session(); }));
  svr.Get(R"(/api/v1/sessions/([^/]+))",
          guarded([this](const httplib::Request& req) { return get_session(req.matches[1].str()); }));
  svr.Post("/api/v1/identify", guarded([this, body_json](const httplib::Request& req) { return identify(body_json(req)); }));
  svr.Post("/api/v1/confirmations",
           guarded([this, body_json](const httplib::Request& req) { return confirm(body_json(req)); }));
  svr.Get("/api/v1/confirmations", guarded([this](const httplib::Request&) { return list_confirmations(); }));
  svr.Get("/api/v1/individuals", guarded([this](const httplib::Request&) { return list_individuals(); }));
  svr.Get(R"(/api/v1/individuals/([^/]+))",
          guarded([this](const httplib::Request& req) { return get_individual(req.matches[1].str()); }));
  svr.Post("/api/v1/train", guarded([this, body_json](const httplib::Request& req) { return start_training(body_json(req)); }));
  svr.Get(R"(/api/v1/train/([^/]+))",
          guarded([this](const httplib::Request& req) { return training_status(req.matches[1].str()); }));
  svr.Get("/api/v1/report", guarded([this](const httplib::Request&) { return report(); }));
  svr.Get("/api/v1/healthz", guarded([this](const httplib::Request&) { return health(); }));
  svr.Get(R"(/media/(uploads|gallery)/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto path = media_path(req.matches[1].str(), req.matches[2].str());
    if (!path) {
      send(res, fail(404, "no such media"));
      return;
    }
    res.set_content(read_file(*path), content_type_for(*path));
  });

  int bound_port = port;
  if (port == 0) {
    bound_port = svr.bind_to_any_port(host);
  } else if (!svr.bind_to_port(host, port)) {
    bound_port = -1;
  }
  if (bound_port < 0) throw Error(ErrorCode::kIoError, "cannot bind " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound_port;
}

void Service::listen() { impl_->server.listen_after_bind(); }

void Service::stop() {
  if (impl_->bound) impl_->server.stop();
}

}  // namespace herdid
