#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "herdid/backend.hpp"
#include "herdid/detection.hpp"
#include "herdid/feature_store.hpp"
#include "herdid/image.hpp"
#include "herdid/manifest.hpp"
#include "herdid/pca.hpp"
#include "herdid/svm.hpp"
#include "herdid/types.hpp"

namespace herdid {

struct PipelineConfig {
  std::string layer_name = "activation_40";
  int input_resolution = 512;
  std::optional<int> pool_size = 6;
  double pca_multiplier = 2.0;
  SvmParams svm;
  int calibration_folds = 5;
  bool flip_augmentation = true;

  /// Throws Error(kInvalidArgument) for out-of-range values.
  void validate() const;
  /// Provenance of the pooled (pre-PCA) vectors this config produces.
  FeatureProvenance feature_provenance(bool flipped = false) const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Missing keys keep their defaults.
void from_json(const nlohmann::json& j, PipelineConfig& c);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

struct RankedCandidate {
  std::string individual_id;
  double confidence = 0.0;
  bool operator==(const RankedCandidate&) const = default;
};

/// Candidates by decreasing confidence; ties by ascending id.
struct Ranking {
  std::vector<RankedCandidate> candidates;
  int query_image_count = 1;
  bool operator==(const Ranking&) const = default;
};

/// First min(k, K) candidates. Throws Error(kInvalidArgument) for k < 1.
std::vector<RankedCandidate> top_k(const Ranking& r, int k);
/// 1-based rank of `id`, 0 if absent.
int rank_of(const Ranking& r, const std::string& id);

struct TrainingSummary {
  std::map<std::string, int> class_counts;  // original train images per class
  std::string timestamp;                    // UTC, ISO 8601
  int train_images = 0;
  int training_vectors = 0;
  int feature_dim = 0;
  int pca_requested_dim = 0;
  int pca_dim = 0;
  bool pca_clamped = false;
  std::vector<std::string> degenerate_calibration;
  std::vector<std::string> in_sample_calibration;
  int unconverged_classes = 0;
};

void to_json(nlohmann::json& j, const TrainingSummary& s);
void from_json(const nlohmann::json& j, TrainingSummary& s);

/// Everything needed to identify: immutable once built.
struct ModelArchive {
  static constexpr int kFormatVersion = 1;

  int format_version = kFormatVersion;
  PipelineConfig config;
  PcaModel pca;
  SvmModel svm;
  /// Known individuals, sorted by id; aligned with svm.classes.
  std::vector<Individual> gallery;
  /// Image references used as representatives: image id -> uri.
  std::map<std::string, std::string> gallery_images;
  TrainingSummary summary;

  const Individual* find_individual(const std::string& id) const;
};

/// Binary layout: "EID1", u64 LE header length, JSON header, then four
/// sections (PCA mean, PCA components row-major, SVM weights row-major,
/// SVM biases), each a u64 LE element count followed by LE float64 values.
std::string serialize_archive(const ModelArchive& archive);
/// Throws Error(kFormatError) on malformed input.
ModelArchive deserialize_archive(std::string_view bytes);
void save_archive(const std::filesystem::path& path, const ModelArchive& archive);
ModelArchive load_archive(const std::filesystem::path& path);

/// Returns the raster for a manifest entry. Defaults to decoding the file
/// the entry's uri resolves to.
using ImageLoader = std::function<RgbImage(const DatasetManifest&, const ManifestEntry&)>;
RgbImage load_entry_image(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Extracts, pools and caches pre-PCA feature vectors for manifest images.
/// Thread-safe.
class FeatureExtractor {
 public:
  /// `store` may be null (no caching); when set its provenance must match.
  /// Entries without a box use the detector's top proposal, or the full
  /// image when no detector is given or it finds nothing.
  FeatureExtractor(std::shared_ptr<const EmbeddingBackend> backend, std::optional<int> pool_size,
                   FeatureStore* store = nullptr, const DetectorBackend* detector = nullptr,
                   ImageLoader loader = load_entry_image);

  FeatureVector features(const DatasetManifest& manifest, const ManifestEntry& entry, bool flipped) const;
  /// Unflipped vector, then the flipped one when `with_flip`; the image is
  /// decoded at most once.
  std::vector<FeatureVector> features_all(const DatasetManifest& manifest, const ManifestEntry& entry,
                                          bool with_flip) const;
  /// Direct path for an in-memory image (no caching).
  FeatureVector features(const RgbImage& image, const BoundingBox& box, bool flipped) const;

  const EmbeddingBackend& backend() const { return *backend_; }
  FeatureProvenance provenance(bool flipped) const;

 private:
  BoundingBox box_for(const RgbImage& image, const ManifestEntry& entry) const;

  std::shared_ptr<const EmbeddingBackend> backend_;
  std::optional<int> pool_size_;
  FeatureStore* store_;
  const DetectorBackend* detector_;
  ImageLoader loader_;
};

/// A backend retargeted to the config's tap and resolution.
std::shared_ptr<const EmbeddingBackend> backend_for(const EmbeddingBackend& base, const PipelineConfig& config);

/// Extraction (with flipped copies when enabled), PCA to
/// multiplier x train-image-count dims, one-vs-rest SVM and calibration.
/// Throws Error(kSingleClass) with fewer than two train individuals.
ModelArchive train_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                            const FeatureExtractor& extractor);
/// Convenience overload building the extractor.
ModelArchive train_pipeline(const DatasetManifest& manifest, const PipelineConfig& config,
                            const EmbeddingBackend& backend, FeatureStore* store = nullptr,
                            const DetectorBackend* detector = nullptr);

/// Mean of calibrated vectors, renormalized to sum 1.
ScoreVector aggregate(const std::vector<ScoreVector>& scores);

/// Sorts calibrated scores into a ranking.
Ranking make_ranking(const SvmModel& model, const ScoreVector& probs, int query_image_count);

/// Calibrated class probabilities for one pre-PCA vector. Throws
/// Error(kProvenanceMismatch) if its provenance disagrees with the model.
ScoreVector score_features(const ModelArchive& model, const FeatureVector& v);

/// Scores each query vector, aggregates and ranks.
Ranking identify_features(const ModelArchive& model, const std::vector<FeatureVector>& queries);

struct Query {
  RgbImage image;
  BoundingBox box = full_image_box();
};

/// Extracts unflipped features for every query with `backend` and ranks.
Ranking identify(const ModelArchive& model, const std::vector<Query>& queries, const EmbeddingBackend& backend);

/// Up to `limit` train image ids of `individual`, largest box area first
/// (ties by id).
std::vector<std::string> representative_images(const DatasetManifest& manifest, const std::string& individual,
                                               std::size_t limit = 5);

void to_json(nlohmann::json& j, const Ranking& r);

}  // namespace herdid
