#include "herdid/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "herdid/error.hpp"
#include "herdid/fs_util.hpp"
#include "herdid/json.hpp"
#include "herdid/pooling.hpp"
#include "parallel.hpp"

namespace herdid {

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  if (layer_name.empty()) throw Error(ErrorCode::kInvalidArgument, "layer_name is empty");
  if (input_resolution < 1) throw Error(ErrorCode::kInvalidArgument, "input_resolution must be positive");
  if (pool_size && *pool_size < 2) throw Error(ErrorCode::kInvalidPoolSize, "pool_size must be >= 2");
  if (!(pca_multiplier > 0.0)) throw Error(ErrorCode::kInvalidArgument, "pca multiplier must be > 0");
  if (!(svm.C > 0.0)) throw Error(ErrorCode::kInvalidArgument, "svm C must be > 0");
  if (calibration_folds < 2) throw Error(ErrorCode::kInvalidArgument, "calibration_folds must be >= 2");
}

FeatureProvenance PipelineConfig::feature_provenance(bool flipped) const {
  return {layer_name, input_resolution, pool_size, flipped, false};
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{
      {"layer_name", c.layer_name},
      {"input_resolution", c.input_resolution},
      {"pool_size", c.pool_size ? nlohmann::json(*c.pool_size) : nlohmann::json(nullptr)},
      {"pca_multiplier", c.pca_multiplier},
      {"svm",
       {{"C", c.svm.C},
        {"class_weights", to_string(c.svm.class_weights)},
        {"tolerance", c.svm.tolerance},
        {"max_epochs", c.svm.max_epochs},
        {"bias_scale", c.svm.bias_scale},
        {"seed", c.svm.seed}}},
      {"calibration_folds", c.calibration_folds},
      {"flip_augmentation", c.flip_augmentation},
  };
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  c.layer_name = j.value("layer_name", c.layer_name);
  c.input_resolution = j.value("input_resolution", c.input_resolution);
  if (j.contains("pool_size")) {
    const auto& p = j.at("pool_size");
    if (p.is_null() || (p.is_string() && p.get<std::string>() == "none")) {
      c.pool_size.reset();
    } else {
      c.pool_size = p.get<int>();
    }
  }
  c.pca_multiplier = j.value("pca_multiplier", c.pca_multiplier);
  if (j.contains("svm")) {
    const auto& s = j.at("svm");
    c.svm.C = s.value("C", c.svm.C);
    if (s.contains("class_weights")) {
      c.svm.class_weights = class_weight_mode_from_string(s.at("class_weights").get<std::string>());
    }
    c.svm.tolerance = s.value("tolerance", c.svm.tolerance);
    c.svm.max_epochs = s.value("max_epochs", c.svm.max_epochs);
    c.svm.bias_scale = s.value("bias_scale", c.svm.bias_scale);
    c.svm.seed = s.value("seed", c.svm.seed);
    c.svm.threads = s.value("threads", c.svm.threads);
  }
  c.calibration_folds = j.value("calibration_folds", c.calibration_folds);
  c.flip_augmentation = j.value("flip_augmentation", c.flip_augmentation);
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  PipelineConfig c;
  try {
    c = nlohmann::json::parse(read_file(path)).get<PipelineConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + ex.what());
  }
  c.validate();
  return c;
}

void to_json(nlohmann::json& j, const TrainingSummary& s) {
  j = nlohmann::json{{"class_counts", s.class_counts},
                     {"timestamp", s.timestamp},
                     {"train_images", s.train_images},
                     {"training_vectors", s.training_vectors},
                     {"feature_dim", s.feature_dim},
                     {"pca_requested_dim", s.pca_requested_dim},
                     {"pca_dim", s.pca_dim},
                     {"pca_clamped", s.pca_clamped},
                     {"degenerate_calibration", s.degenerate_calibration},
                     {"in_sample_calibration", s.in_sample_calibration},
                     {"unconverged_classes", s.unconverged_classes}};
}

void from_json(const nlohmann::json& j, TrainingSummary& s) {
  j.at("class_counts").get_to(s.class_counts);
  j.at("timestamp").get_to(s.timestamp);
  j.at("train_images").get_to(s.train_images);
  j.at("training_vectors").get_to(s.training_vectors);
  j.at("feature_dim").get_to(s.feature_dim);
  j.at("pca_requested_dim").get_to(s.pca_requested_dim);
  j.at("pca_dim").get_to(s.pca_dim);
  j.at("pca_clamped").get_to(s.pca_clamped);
  j.at("degenerate_calibration").get_to(s.degenerate_calibration);
  j.at("in_sample_calibration").get_to(s.in_sample_calibration);
  j.at("unconverged_classes").get_to(s.unconverged_classes);
}

// ---------------------------------------------------------------------------
// Rankings

std::vector<RankedCandidate> top_k(const Ranking& r, int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "top_k needs k >= 1");
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), r.candidates.size());
  return {r.candidates.begin(), r.candidates.begin() + static_cast<std::ptrdiff_t>(n)};
}

int rank_of(const Ranking& r, const std::string& id) {
  for (std::size_t i = 0; i < r.candidates.size(); ++i) {
    if (r.candidates[i].individual_id == id) return static_cast<int>(i) + 1;
  }
  return 0;
}

void to_json(nlohmann::json& j, const Ranking& r) {
  j = nlohmann::json::object();
  j["query_image_count"] = r.query_image_count;
  auto& c = j["candidates"] = nlohmann::json::array();
  for (const auto& cand : r.candidates) {
    c.push_back({{"individual_id", cand.individual_id}, {"confidence", cand.confidence}});
  }
}

const Individual* ModelArchive::find_individual(const std::string& id) const {
  auto it = std::lower_bound(gallery.begin(), gallery.end(), id,
                             [](const Individual& a, const std::string& b) { return a.id < b; });
  return it != gallery.end() && it->id == id ? &*it : nullptr;
}

// ---------------------------------------------------------------------------
// Extraction

RgbImage load_entry_image(const DatasetManifest& manifest, const ManifestEntry& entry) {
  return load_image(manifest.resolve_uri(entry));
}

FeatureExtractor::FeatureExtractor(std::shared_ptr<const EmbeddingBackend> backend, std::optional<int> pool_size,
                                   FeatureStore* store, const DetectorBackend* detector, ImageLoader loader)
    : backend_(std::move(backend)),
      pool_size_(pool_size),
      store_(store),
      detector_(detector),
      loader_(std::move(loader)) {
  if (!backend_) throw Error(ErrorCode::kInvalidArgument, "feature extractor needs a backend");
  if (store_ && store_->provenance() && !store_->provenance()->compatible_with(provenance(false))) {
    throw Error(ErrorCode::kProvenanceConflict,
                "feature store holds " + feature_store_dirname(*store_->provenance()) + ", extractor produces " +
                    feature_store_dirname(provenance(false)));
  }
}

FeatureProvenance FeatureExtractor::provenance(bool flipped) const {
  return {backend_->config().layer_name, backend_->config().input_resolution, pool_size_, flipped, false};
}

BoundingBox FeatureExtractor::box_for(const RgbImage& image, const ManifestEntry& entry) const {
  if (entry.box) return *entry.box;
  if (detector_) {
    const auto dets = detector_->detect_heads(image);
    if (!dets.empty()) return dets.front().box;
  }
  return full_image_box();
}

FeatureVector FeatureExtractor::features(const RgbImage& image, const BoundingBox& box, bool flipped) const {
  box.validate("query box");
  const auto& cfg = backend_->config();
  return pool_and_flatten(backend_->extract(image, box, flipped), pool_size_, cfg.layer_name,
                          cfg.input_resolution, flipped);
}

std::vector<FeatureVector> FeatureExtractor::features_all(const DatasetManifest& manifest,
                                                          const ManifestEntry& entry, bool with_flip) const {
  std::vector<FeatureVector> out;
  std::optional<RgbImage> image;
  std::optional<BoundingBox> box;
  const int count = with_flip ? 2 : 1;
  try {
    for (int f = 0; f < count; ++f) {
      const bool flipped = f == 1;
      if (store_ && store_->contains(entry.image_id, flipped)) {
        out.push_back(store_->get(entry.image_id, flipped));
        out.back().provenance.flipped = flipped;
        continue;
      }
      if (!image) {
        image = loader_(manifest, entry);
        box = box_for(*image, entry);
      }
      out.push_back(features(*image, *box, flipped));
      if (store_) store_->put(entry.image_id, flipped, out.back());
    }
  } catch (const Error& ex) {
    throw Error(ex.code(), "image '" + entry.image_id + "': " + ex.what());
  }
  return out;
}

FeatureVector FeatureExtractor::features(const DatasetManifest& manifest, const ManifestEntry& entry,
                                         bool flipped) const {
  if (!flipped) return features_all(manifest, entry, false).front();
  if (store_ && store_->contains(entry.image_id, true)) {
    auto v = store_->get(entry.image_id, true);
    v.provenance.flipped = true;
    return v;
  }
  try {
    const RgbImage image = loader_(manifest, entry);
    auto v = features(image, box_for(image, entry), true);
    if (store_) store_->put(entry.image_id, true, v);
    return v;
  } catch (const Error& ex) {
    throw Error(ex.code(), "image '" + entry.image_id + "': " + ex.what());
  }
}

std::shared_ptr<const EmbeddingBackend> backend_for(const EmbeddingBackend& base, const PipelineConfig& config) {
  return base.with_tap(config.layer_name, config.input_resolution);
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::vector<std::string> representative_images(const DatasetManifest& manifest, const std::string& individual,
                                               std::size_t limit) {
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& e : manifest.entries()) {
    if (e.individual_id != individual || e.split != Split::kTrain) continue;
    scored.emplace_back(e.box ? e.box->area() : 1.0, e.image_id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scored.size() && i < limit; ++i) out.push_back(scored[i].second);
  return out;
}

ModelArchive train_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                            const FeatureExtractor& extractor) {
  config.validate();
  const FeatureProvenance expected = config.feature_provenance();
  if (!extractor.provenance(false).compatible_with(expected)) {
    throw Error(ErrorCode::kProvenanceMismatch, "extractor produces " +
                                                    feature_store_dirname(extractor.provenance(false)) +
                                                    ", config expects " + feature_store_dirname(expected));
  }
  const std::vector<ManifestEntry> train = manifest.subset(Split::kTrain);
  std::set<std::string> ids;
  for (const auto& e : train) ids.insert(e.individual_id);
  if (ids.size() < 2) {
    throw Error(ErrorCode::kSingleClass, "training needs at least 2 individuals, found " +
                                             std::to_string(ids.size()));
  }

  const int per_image = config.flip_augmentation ? 2 : 1;
  std::vector<std::vector<FeatureVector>> extracted(train.size());
  detail::parallel_for(static_cast<int>(train.size()), config.svm.threads, [&](int i) {
    extracted[i] = extractor.features_all(manifest, train[i], config.flip_augmentation);
  });

  const auto dim = static_cast<Eigen::Index>(extracted.front().front().dim());
  const auto rows = static_cast<Eigen::Index>(train.size()) * per_image;
  Eigen::MatrixXd X(rows, dim);
  std::vector<std::string> labels;
  std::vector<std::string> groups;
  labels.reserve(rows);
  groups.reserve(rows);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    for (const auto& v : extracted[i]) {
      if (static_cast<Eigen::Index>(v.dim()) != dim) {
        throw Error(ErrorCode::kDimensionMismatch, "image '" + train[i].image_id + "' has feature dim " +
                                                       std::to_string(v.dim()) + ", expected " +
                                                       std::to_string(dim));
      }
      X.row(r++) = Eigen::Map<const Eigen::RowVectorXd>(v.values.data(), dim);
      labels.push_back(train[i].individual_id);
      groups.push_back(train[i].image_id);
    }
  }
  extracted.clear();

  ModelArchive archive;
  archive.config = config;
  archive.pca = fit_pca(X, pca_target_dim(static_cast<int>(train.size()), config.pca_multiplier));
  const Eigen::MatrixXd Z = project_rows(archive.pca, X);
  X.resize(0, 0);

  const SvmModel svm = train_svm(Z, labels, config.svm);
  CalibrationReport cal_report;
  archive.svm = fit_calibration(svm, Z, labels, config.calibration_folds, groups, &cal_report);

  for (const auto& id : archive.svm.classes) {
    Individual ind;
    ind.id = id;
    ind.name = id;
    for (const auto& e : train) {
      if (e.individual_id == id && e.name) {
        ind.name = *e.name;
        break;
      }
    }
    ind.representative_image_ids = representative_images(manifest, id);
    for (const auto& img : ind.representative_image_ids) {
      archive.gallery_images[img] = manifest.resolve_uri(manifest.find(img)).string();
    }
    archive.gallery.push_back(std::move(ind));
  }

  auto& s = archive.summary;
  for (const auto& e : train) ++s.class_counts[e.individual_id];
  s.timestamp = utc_timestamp();
  s.train_images = static_cast<int>(train.size());
  s.training_vectors = static_cast<int>(rows);
  s.feature_dim = static_cast<int>(dim);
  s.pca_requested_dim = archive.pca.requested_dim;
  s.pca_dim = archive.pca.output_dim();
  s.pca_clamped = archive.pca.clamped();
  s.degenerate_calibration = cal_report.degenerate_classes;
  s.in_sample_calibration = cal_report.in_sample_classes;
  for (const auto& st : archive.svm.solver_stats) s.unconverged_classes += st.converged ? 0 : 1;
  return archive;
}

ModelArchive train_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                            const EmbeddingBackend& backend, FeatureStore* store, const DetectorBackend* detector) {
  config.validate();
  const FeatureExtractor extractor(backend_for(backend, config), config.pool_size, store, detector);
  return train_pipeline(manifest, config, extractor);
}

// ---------------------------------------------------------------------------
// Identification

ScoreVector aggregate(const std::vector<ScoreVector>& scores) {
  if (scores.empty()) throw Error(ErrorCode::kInvalidArgument, "aggregate needs at least one score vector");
  const std::size_t k = scores.front().values.size();
  std::vector<double> sum(k, 0.0);
  for (const auto& s : scores) {
    if (s.kind != ScoreKind::kCalibrated) throw Error(ErrorCode::kInvalidArgument, "aggregate expects calibrated scores");
    if (s.values.size() != k) throw Error(ErrorCode::kDimensionMismatch, "score vectors are not aligned");
    for (std::size_t c = 0; c < k; ++c) sum[c] += s.values[c];
  }
  ScoreVector out{std::vector<double>(k), ScoreKind::kCalibrated};
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) total += (out.values[c] = sum[c] / static_cast<double>(scores.size()));
  for (double& v : out.values) v /= total;
  return out;
}

Ranking make_ranking(const SvmModel& model, const ScoreVector& probs, int query_image_count) {
  if (probs.values.size() != model.classes.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "score vector does not match the class list");
  }
  std::vector<std::size_t> order(probs.values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (probs.values[a] != probs.values[b]) return probs.values[a] > probs.values[b];
    return model.classes[a] < model.classes[b];
  });
  Ranking r;
  r.query_image_count = query_image_count;
  for (std::size_t i : order) r.candidates.push_back({model.classes[i], probs.values[i]});
  return r;
}

ScoreVector score_features(const ModelArchive& model, const FeatureVector& v) {
  const FeatureProvenance expected = model.config.feature_provenance();
  if (!v.provenance.compatible_with(expected)) {
    throw Error(ErrorCode::kProvenanceMismatch, "query features are " + feature_store_dirname(v.provenance) +
                                                    ", model expects " + feature_store_dirname(expected));
  }
  v.check_finite();
  return calibrated_probs(model.svm, project(model.pca, v));
}

Ranking identify_features(const ModelArchive& model, const std::vector<FeatureVector>& queries) {
  if (queries.empty()) throw Error(ErrorCode::kInvalidArgument, "identify needs at least one query");
  std::vector<ScoreVector> scores;
  scores.reserve(queries.size());
  for (const auto& q : queries) scores.push_back(score_features(model, q));
  return make_ranking(model.svm, aggregate(scores), static_cast<int>(queries.size()));
}

Ranking identify(const ModelArchive& model, const std::vector<Query>& queries, const EmbeddingBackend& backend) {
  if (queries.empty()) throw Error(ErrorCode::kInvalidArgument, "identify needs at least one query");
  const auto& cfg = backend.config();
  const FeatureProvenance produced{cfg.layer_name, cfg.input_resolution, model.config.pool_size, false, false};
  if (!produced.compatible_with(model.config.feature_provenance())) {
    throw Error(ErrorCode::kProvenanceMismatch, "backend produces " + feature_store_dirname(produced) +
                                                    ", model expects " +
                                                    feature_store_dirname(model.config.feature_provenance()));
  }
  std::vector<FeatureVector> features(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    queries[i].box.validate("query box");
    features[i] = pool_and_flatten(backend.extract(queries[i].image, queries[i].box, false), model.config.pool_size,
                                   cfg.layer_name, cfg.input_resolution, false);
  }
  return identify_features(model, features);
}

}  // namespace herdid
