// herdid command line: training, evaluation, identification, detection and
// the HTTP service.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "herdid/detection.hpp"
#include "herdid/error.hpp"
#include "herdid/evaluation.hpp"
#include "herdid/fs_util.hpp"
#include "herdid/json.hpp"
#include "herdid/manifest.hpp"
#include "herdid/pipeline.hpp"
#include "herdid/service.hpp"
#include "herdid/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace herdid;

namespace {

struct BackendOptions {
  std::string kind = "stub";
  std::string embed_model;
  std::string normalization = "caffe";
  double crop_padding = 0.0;
  std::string detector = "stub";
  std::string detect_model;

  void add(CLI::App* app) {
    app->add_option("--backend", kind, "Embedding backend")->check(CLI::IsMember({"stub", "onnx"}));
    app->add_option("--embed-model", embed_model, "ONNX feature network (for --backend onnx)");
    app->add_option("--normalization", normalization, "Input normalization of the ONNX network")
        ->check(CLI::IsMember({"caffe", "torch", "identity"}));
    app->add_option("--crop-padding", crop_padding, "Box padding fraction added on every side");
  }
  void add_detector(CLI::App* app) {
    app->add_option("--detector", detector, "Head detector")->check(CLI::IsMember({"stub", "onnx", "none"}));
    app->add_option("--detect-model", detect_model, "ONNX detector (for --detector onnx)");
  }

  BackendConfig config() const {
    BackendConfig c;
    c.model_uri = embed_model;
    c.normalization = Normalization::by_name(normalization);
    c.crop_padding = crop_padding;
    return c;
  }
  std::shared_ptr<const EmbeddingBackend> backend() const { return make_embedding_backend(kind, config()); }
  std::unique_ptr<DetectorBackend> make_detector() const {
    if (detector == "stub") return std::make_unique<StubDetector>();
    if (detector == "onnx") {
      OnnxDetectorConfig c;
      c.model_uri = detect_model;
      return std::make_unique<OnnxDetector>(c);
    }
    return nullptr;
  }
};

BoundingBox parse_box(const std::string& text) {
  std::stringstream in(text);
  BoundingBox b;
  char c1 = 0, c2 = 0, c3 = 0;
  if (!(in >> b.x >> c1 >> b.y >> c2 >> b.w >> c3 >> b.h) || c1 != ',' || c2 != ',' || c3 != ',') {
    throw Error(ErrorCode::kInvalidArgument, "box must be x,y,w,h fractions, got '" + text + "'");
  }
  b.validate("--box");
  return b;
}

fs::path text_report_path(const fs::path& json_path) {
  fs::path p = json_path;
  p.replace_extension(".txt");
  return p;
}

std::string default_data_dir() {
  const char* env = std::getenv("HERDID_DATA_DIR");
  return env ? env : "herdid-data";
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Individual animal re-identification from head crops"};
  app.require_subcommand(1);

  // train
  BackendOptions train_backend;
  std::string train_manifest, train_config, train_out, train_cache;
  double split_fraction = 0.0;
  std::uint64_t split_seed = 0;
  auto* train = app.add_subcommand("train", "Train a model archive from a split manifest");
  train->add_option("--manifest", train_manifest, "JSON-lines manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--config", train_config, "Pipeline config JSON")->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output model archive")->required();
  train->add_option("--feature-cache", train_cache, "Feature store root directory");
  train->add_option("--split", split_fraction, "Split an unassigned manifest with this test fraction first");
  train->add_option("--split-seed", split_seed, "Seed for --split");
  train_backend.add(train);
  train_backend.add_detector(train);

  // evaluate
  BackendOptions eval_backend;
  std::string eval_manifest, eval_grid, eval_report, eval_config, eval_cache;
  std::uint64_t eval_seed = 0;
  auto* evaluate = app.add_subcommand("evaluate", "Run the layer/pooling evaluation grid");
  evaluate->add_option("--manifest", eval_manifest, "Split JSON-lines manifest")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--grid", eval_grid, "Grid JSON (default: the seven standard rows)")->check(CLI::ExistingFile);
  evaluate->add_option("--report-out", eval_report, "Report JSON path; a .txt table is written next to it")->required();
  evaluate->add_option("--config", eval_config, "Base pipeline config JSON")->check(CLI::ExistingFile);
  evaluate->add_option("--seed", eval_seed, "Probe construction seed");
  evaluate->add_option("--feature-cache", eval_cache, "Feature store root directory");
  eval_backend.add(evaluate);

  // identify
  BackendOptions id_backend;
  std::string id_model;
  std::vector<std::string> id_images, id_boxes;
  int id_top = 10;
  auto* identify_cmd = app.add_subcommand("identify", "Rank individuals for one or more query images");
  identify_cmd->add_option("--model", id_model, "Model archive")->required()->check(CLI::ExistingFile);
  identify_cmd->add_option("--image", id_images, "Query image (repeatable)")->required()->check(CLI::ExistingFile);
  identify_cmd->add_option("--box", id_boxes, "Head box x,y,w,h per image (default: whole image)");
  identify_cmd->add_option("--top", id_top, "Candidates to print")->check(CLI::PositiveNumber);
  id_backend.add(identify_cmd);

  // detect
  BackendOptions det_backend;
  std::string det_image;
  auto* detect = app.add_subcommand("detect", "Propose head boxes for an image");
  detect->add_option("--image", det_image, "Image file")->required()->check(CLI::ExistingFile);
  det_backend.add_detector(detect);

  // detect-eval
  std::string de_pred, de_truth;
  double de_iou = 0.5;
  auto* detect_eval = app.add_subcommand("detect-eval", "Precision, recall and AP of detections");
  detect_eval->add_option("--predictions", de_pred, "Detections JSON-lines")->required()->check(CLI::ExistingFile);
  detect_eval->add_option("--ground-truth", de_truth, "Ground-truth JSON-lines")->required()->check(CLI::ExistingFile);
  detect_eval->add_option("--iou", de_iou, "Match threshold");

  // serve
  BackendOptions serve_backend;
  std::string serve_model, serve_data = default_data_dir(), serve_host = "127.0.0.1", serve_train_manifest;
  int serve_port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--model", serve_model, "Initial model archive (used when the data dir has none)")
      ->check(CLI::ExistingFile);
  serve->add_option("--data-dir", serve_data, "Data directory (default $HERDID_DATA_DIR)");
  serve->add_option("--host", serve_host, "Listen address");
  serve->add_option("--port", serve_port, "Listen port");
  serve->add_option("--train-manifest", serve_train_manifest, "Default manifest for POST /train");
  serve_backend.add(serve);
  serve_backend.add_detector(serve);

  // synth
  SyntheticSpec spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Write a synthetic head-crop dataset");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--classes", spec.classes, "Number of individuals");
  synth->add_option("--images", spec.images_per_class, "Images per individual");
  synth->add_option("--size", spec.image_size, "Image side in pixels");
  synth->add_option("--cell-noise", spec.cell_noise, "Per-cell colour noise");
  synth->add_option("--pixel-noise", spec.pixel_noise, "Per-pixel noise");
  synth->add_option("--test-fraction", spec.test_fraction, "Test fraction (0 leaves the manifest unassigned)");
  synth->add_option("--seed", spec.seed, "Seed");

  // split
  std::string split_in, split_out;
  double split_frac = 0.25;
  std::uint64_t split_seed2 = 0;
  auto* split = app.add_subcommand("split", "Stratified train/test split of an unassigned manifest");
  split->add_option("--manifest", split_in, "Input manifest")->required()->check(CLI::ExistingFile);
  split->add_option("--out", split_out, "Output manifest")->required();
  split->add_option("--fraction", split_frac, "Test fraction");
  split->add_option("--seed", split_seed2, "Seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      DatasetManifest manifest = load_manifest(train_manifest);
      if (split_fraction > 0.0) manifest = stratified_split(manifest, split_fraction, split_seed);
      const PipelineConfig cfg = train_config.empty() ? PipelineConfig{} : load_pipeline_config(train_config);
      const auto backend = backend_for(*train_backend.backend(), cfg);
      const auto detector = train_backend.make_detector();
      std::unique_ptr<FeatureStore> store;
      if (!train_cache.empty()) {
        store = std::make_unique<FeatureStore>(fs::path(train_cache) / feature_store_dirname(cfg.feature_provenance()));
      }
      const FeatureExtractor extractor(backend, cfg.pool_size, store.get(), detector.get());
      const ModelArchive model = train_pipeline(manifest, cfg, extractor);
      save_archive(train_out, model);
      std::cout << json(model.summary).dump(2) << '\n';
    } else if (*evaluate) {
      const DatasetManifest manifest = load_manifest(eval_manifest);
      EvaluationOptions opts;
      opts.seed = eval_seed;
      if (!eval_config.empty()) opts.base = load_pipeline_config(eval_config);
      opts.feature_cache = eval_cache;
      const auto grid = eval_grid.empty() ? default_grid() : load_grid(eval_grid);
      const EvaluationReport report = run_evaluation(grid, manifest, *eval_backend.backend(), opts);
      atomic_write_file(eval_report, json(report).dump(2) + "\n");
      atomic_write_file(text_report_path(eval_report), report.to_text());
      std::cout << report.to_text();
    } else if (*identify_cmd) {
      const ModelArchive model = load_archive(id_model);
      if (!id_boxes.empty() && id_boxes.size() != id_images.size()) {
        throw Error(ErrorCode::kInvalidArgument, "give either no --box or one per --image");
      }
      std::vector<Query> queries;
      for (std::size_t i = 0; i < id_images.size(); ++i) {
        queries.push_back({load_image(id_images[i]), id_boxes.empty() ? full_image_box() : parse_box(id_boxes[i])});
      }
      const auto backend = backend_for(*id_backend.backend(), model.config);
      const Ranking r = identify(model, queries, *backend);
      Ranking shown = r;
      shown.candidates = top_k(r, id_top);
      std::cout << json(shown).dump(2) << '\n';
    } else if (*detect) {
      const auto detector = det_backend.make_detector();
      if (!detector) throw Error(ErrorCode::kInvalidArgument, "no detector selected");
      const std::string bytes = read_file(det_image);
      DetectionRecord rec{sha256_hex(bytes), detector->detect_heads(decode_image(bytes))};
      std::cout << to_jsonl_line(rec) << '\n';
    } else if (*detect_eval) {
      std::ifstream pin(de_pred), tin(de_truth);
      std::map<std::string, std::vector<Detection>> preds;
      std::map<std::string, std::vector<BoundingBox>> truth;
      for (auto& r : read_detection_jsonl(pin)) preds[r.image_id] = std::move(r.detections);
      for (auto& r : read_detection_jsonl(tin)) {
        auto& boxes = truth[r.image_id];
        for (const auto& d : r.detections) boxes.push_back(d.box);
      }
      for (const auto& [id, _] : truth) preds.try_emplace(id);
      for (const auto& [id, _] : preds) truth.try_emplace(id);
      const auto res = evaluate_detections(preds, truth, de_iou);
      std::cout << json{{"precision", res.precision},
                        {"recall", res.recall},
                        {"average_precision", res.average_precision},
                        {"true_positives", res.true_positives},
                        {"false_positives", res.false_positives},
                        {"false_negatives", res.false_negatives},
                        {"precision_undefined", res.precision_undefined},
                        {"recall_undefined", res.recall_undefined}}
                       .dump(2)
                << '\n';
    } else if (*serve) {
      ServiceConfig cfg;
      cfg.data_dir = serve_data;
      if (!serve_model.empty()) cfg.initial_model = serve_model;
      if (!serve_train_manifest.empty()) cfg.train_manifest = serve_train_manifest;
      cfg.backend_kind = serve_backend.kind;
      cfg.backend = serve_backend.config();
      cfg.detector_kind = serve_backend.detector;
      cfg.detector.model_uri = serve_backend.detect_model;
      Service service(cfg);
      const int port = service.bind(serve_host, serve_port);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on http://" << serve_host << ':' << port << " (data dir " << serve_data
                << ", model version " << service.model_version() << ")\n";
      service.listen();
      g_service = nullptr;
    } else if (*synth) {
      const SyntheticDataset ds = make_synthetic_dataset(spec);
      ds.write(synth_out);
      std::cout << "wrote " << ds.images.size() << " images to " << synth_out << '\n';
    } else if (*split) {
      save_manifest(split_out, stratified_split(load_manifest(split_in), split_frac, split_seed2));
    }
  } catch (const Error& ex) {
    std::cerr << "error [" << to_string(ex.code()) << "]: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  }
  return 0;
}
