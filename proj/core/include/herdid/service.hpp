#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "herdid/backend.hpp"
#include "herdid/detection.hpp"
#include "herdid/pipeline.hpp"

namespace herdid {

struct ServiceConfig {
  /// Holds images/, models/, sessions/, confirmations/ and report.json.
  std::filesystem::path data_dir;
  /// Installed as the first model version when data_dir has none.
  std::optional<std::filesystem::path> initial_model;
  std::string backend_kind = "stub";
  BackendConfig backend;
  /// "stub", "onnx" or "none".
  std::string detector_kind = "stub";
  OnnxDetectorConfig detector;
  std::size_t max_upload_bytes = 20u << 20;
  int top_n = 10;
  int representatives = 5;
  /// Default manifest for POST /train.
  std::optional<std::filesystem::path> train_manifest;
  /// Called before each durable file is renamed into place (fault injection).
  std::function<void(const std::filesystem::path&)> before_commit;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Identification workflow over a data directory. All handlers are
/// thread-safe; the served model is an immutable snapshot replaced
/// atomically when a training job completes.
class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ApiResponse upload(std::string_view bytes);
  ApiResponse detect(const std::string& image_id);
  ApiResponse create_session();
  ApiResponse get_session(const std::string& session_id);
  /// {"session_id"?: str, "items": [{"image_id": str, "box"?: {x,y,w,h}}]}
  ApiResponse identify(const nlohmann::json& request);
  /// {"session_id": str, "individual_id": str | "unknown"}
  ApiResponse confirm(const nlohmann::json& request);
  ApiResponse list_confirmations();
  ApiResponse list_individuals();
  ApiResponse get_individual(const std::string& id);
  /// {"manifest"?: path, "config"?: PipelineConfig}
  ApiResponse start_training(const nlohmann::json& request);
  ApiResponse training_status(const std::string& job_id);
  ApiResponse report();
  ApiResponse health();

  /// Current model version, 0 when no model is loaded.
  int model_version() const;
  /// Blocks until no training job is running.
  void wait_for_training();

  /// Media lookup for /media/uploads/<id> and /media/gallery/<id>.
  std::optional<std::filesystem::path> media_path(const std::string& kind, const std::string& id) const;

  /// Binds the HTTP front end; port 0 picks a free port, which is returned.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

  static constexpr const char* kUnknownIndividual = "unknown";

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace herdid
