#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "herdid/backend.hpp"
#include "herdid/manifest.hpp"
#include "herdid/pipeline.hpp"

namespace herdid {

/// Fraction of rankings whose truth is among the first k candidates.
double top_k_accuracy(const std::vector<Ranking>& rankings, const std::vector<std::string>& truths, int k);
/// Mean over the classes present in `truths` of each class's top-k accuracy.
double per_class_top_k(const std::vector<Ranking>& rankings, const std::vector<std::string>& truths, int k);

/// Same metrics from 1-based truth ranks (0 = absent).
double top_k_accuracy(const std::vector<int>& ranks, int k);
double per_class_top_k(const std::vector<int>& ranks, const std::vector<std::string>& truths, int k);

struct Probe {
  std::string individual_id;
  std::vector<std::string> image_ids;
  /// Fewer images than requested (class with a single test image).
  bool short_probe = false;
};

/// Groups the manifest's test images into probes. Each class's test images
/// are sorted by id, shuffled with a seed derived from (seed, class), then
/// cut into consecutive groups of probe_size; the last group wraps around
/// to the class's first images. Classes are visited in id order.
std::vector<Probe> build_probes(const DatasetManifest& manifest, int probe_size, std::uint64_t seed);

/// One configuration of the evaluation grid.
struct GridRow {
  std::string layer_name;
  std::optional<int> pool_size;
  int input_resolution = 512;

  /// "max_4 act. 40", "no pool act. 43", ...
  std::string label() const;
  bool operator==(const GridRow&) const = default;
};

/// The seven tapped/pooled configurations of the reference results table.
std::vector<GridRow> default_grid();
void to_json(nlohmann::json& j, const GridRow& r);
void from_json(const nlohmann::json& j, GridRow& r);
/// A JSON array of rows, or {"rows": [...]}.
std::vector<GridRow> load_grid(const std::filesystem::path& path);

struct EvaluationOptions {
  std::vector<int> ks{1, 5, 10, 20};
  std::vector<int> probe_sizes{1, 2};
  std::uint64_t seed = 0;
  /// Pooling, tap and resolution are overridden per row.
  PipelineConfig base;
  /// Root for per-provenance feature stores; empty disables caching.
  std::filesystem::path feature_cache;
  ImageLoader loader = load_entry_image;
};

struct ReportRow {
  GridRow config;
  int probe_size = 1;
  int probes = 0;
  int short_probes = 0;
  std::vector<double> overall;    // aligned with ks
  std::vector<double> per_class;  // aligned with ks
};

struct EvaluationReport {
  std::vector<int> ks;
  std::uint64_t seed = 0;
  int train_images = 0;
  int test_images = 0;
  int train_classes = 0;
  int test_classes = 0;
  std::string backend;
  std::vector<ReportRow> rows;  // grid order, grouped by probe size

  /// Rows of one probe size, in grid order.
  std::vector<const ReportRow*> table(int probe_size) const;
  /// One aligned table per probe size.
  std::string to_text() const;
};

/// Accuracy arrays in each row are aligned with metadata.ks.
void to_json(nlohmann::json& j, const EvaluationReport& r);

/// Trains one model per grid row on the train split and scores the test
/// split with every probe size.
EvaluationReport run_evaluation(const std::vector<GridRow>& grid, const DatasetManifest& manifest,
                                const EmbeddingBackend& backend, const EvaluationOptions& options = {});

/// Aggregates per-image calibrated scores (keyed by image id) into one
/// ranking per probe.
std::vector<Ranking> rank_probes(const ModelArchive& model, const std::vector<Probe>& probes,
                                 const std::map<std::string, ScoreVector>& scores);

}  // namespace herdid
