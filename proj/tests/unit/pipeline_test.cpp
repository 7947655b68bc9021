#include <atomic>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "error_helpers.hpp"
#include "fixtures.hpp"
#include "herdid/pipeline.hpp"
#include "herdid/synthetic.hpp"

using namespace herdid;
using fixture::error_code;

namespace {

ScoreVector calibrated(std::vector<double> v) { return {std::move(v), ScoreKind::kCalibrated}; }

// Every entry in train.
SyntheticDataset all_train(SyntheticSpec spec) {
  spec.test_fraction = 0.0;
  auto ds = make_synthetic_dataset(spec);
  auto entries = ds.manifest.entries();
  for (auto& e : entries) e.split = Split::kTrain;
  ds.manifest = DatasetManifest(entries, ds.manifest.base_dir());
  return ds;
}

PipelineConfig small_config() {
  PipelineConfig c;
  c.input_resolution = 64;
  c.pool_size = std::nullopt;
  return c;
}

RgbImage mirror(const RgbImage& im) {
  RgbImage out(im.width, im.height);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(im.width - 1 - x, y, c) = im.at(x, y, c);
    }
  }
  return out;
}

}  // namespace

TEST(Aggregate, MeanOfTwo) {
  const auto a = aggregate({calibrated({0.6, 0.4}), calibrated({0.2, 0.8})});
  EXPECT_NEAR(a.values[0], 0.4, 1e-15);
  EXPECT_NEAR(a.values[1], 0.6, 1e-15);
  EXPECT_EQ(a.kind, ScoreKind::kCalibrated);
  EXPECT_EQ(aggregate({calibrated({0.3, 0.7})}).values, (std::vector<double>{0.3, 0.7}));
}

TEST(Aggregate, Errors) {
  EXPECT_EQ(error_code([] { aggregate({}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code([] { aggregate({ScoreVector{{0.5, 0.5}, ScoreKind::kMargin}}); }),
            ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_code([] { aggregate({calibrated({0.5, 0.5}), calibrated({1.0})}); }),
            ErrorCode::kDimensionMismatch);
}

TEST(Ranking, OrderAndTies) {
  SvmModel m;
  m.classes = {"a", "b", "c", "d"};
  const auto r = make_ranking(m, calibrated({0.2, 0.3, 0.3, 0.2}), 2);
  ASSERT_EQ(r.candidates.size(), 4u);
  EXPECT_EQ(r.candidates[0].individual_id, "b");
  EXPECT_EQ(r.candidates[1].individual_id, "c");
  EXPECT_EQ(r.candidates[2].individual_id, "a");
  EXPECT_EQ(r.query_image_count, 2);
  EXPECT_EQ(top_k(r, 2).size(), 2u);
  EXPECT_EQ(top_k(r, 10).size(), 4u);
  EXPECT_EQ(error_code([&] { top_k(r, 0); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(rank_of(r, "c"), 2);
  EXPECT_EQ(rank_of(r, "zz"), 0);
  EXPECT_EQ(error_code([&] { make_ranking(m, calibrated({1.0}), 1); }), ErrorCode::kDimensionMismatch);
}

TEST(PipelineConfig, ValidateAndJson) {
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  nlohmann::json j = c;
  PipelineConfig back = j.get<PipelineConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  PipelineConfig partial = nlohmann::json{{"input_resolution", 128}}.get<PipelineConfig>();
  EXPECT_EQ(partial.input_resolution, 128);
  EXPECT_EQ(partial.layer_name, "activation_40");
  for (auto mutate : std::vector<void (*)(PipelineConfig&)>{
           [](PipelineConfig& p) { p.input_resolution = 0; },
           [](PipelineConfig& p) { p.pca_multiplier = -1; },
           [](PipelineConfig& p) { p.calibration_folds = 1; },
           [](PipelineConfig& p) { p.svm.C = 0; }}) {
    PipelineConfig bad;
    mutate(bad);
    EXPECT_EQ(error_code([&] { bad.validate(); }), ErrorCode::kInvalidArgument);
  }
  PipelineConfig pool;
  pool.pool_size = 1;
  EXPECT_EQ(error_code([&] { pool.validate(); }), ErrorCode::kInvalidPoolSize);
}

TEST(TrainPipeline, VectorCountsAndPcaClamp) {
  SyntheticSpec spec;
  spec.classes = 5;
  spec.images_per_class = 4;
  const auto ds = all_train(spec);
  const StubBackend base{BackendConfig{}};
  auto config = small_config();
  const FeatureExtractor ex(backend_for(base, config), config.pool_size, nullptr, nullptr, ds.loader());
  const auto with_flip = train_pipeline(ds.manifest, config, ex);
  EXPECT_EQ(with_flip.summary.train_images, 20);
  EXPECT_EQ(with_flip.summary.training_vectors, 40);
  EXPECT_EQ(with_flip.summary.pca_requested_dim, 40);
  const int d = with_flip.summary.feature_dim;
  EXPECT_EQ(with_flip.summary.pca_dim, std::min({40, 39, d}));
  EXPECT_EQ(with_flip.summary.pca_clamped, with_flip.summary.pca_dim < 40);
  EXPECT_EQ(with_flip.svm.num_classes(), 5);
  EXPECT_EQ(with_flip.gallery.size(), 5u);
  EXPECT_EQ(with_flip.summary.class_counts.at("ind000"), 4);

  config.flip_augmentation = false;
  const auto no_flip = train_pipeline(ds.manifest, config, ex);
  EXPECT_EQ(no_flip.summary.training_vectors, 20);
  EXPECT_EQ(no_flip.summary.pca_dim, std::min({40, 19, d}));
}

TEST(TrainPipeline, NeedsTwoIndividuals) {
  SyntheticSpec spec;
  spec.classes = 1;
  spec.images_per_class = 3;
  const auto ds = all_train(spec);
  const StubBackend base{BackendConfig{}};
  const auto config = small_config();
  const FeatureExtractor ex(backend_for(base, config), config.pool_size, nullptr, nullptr, ds.loader());
  EXPECT_EQ(error_code([&] { train_pipeline(ds.manifest, config, ex); }), ErrorCode::kSingleClass);
}

TEST(TrainPipeline, ProvenanceMismatch) {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.images_per_class = 3;
  const auto ds = all_train(spec);
  const StubBackend base{BackendConfig{}};
  const auto config = small_config();
  auto other = config;
  other.input_resolution = 96;
  const FeatureExtractor ex(backend_for(base, other), config.pool_size, nullptr, nullptr, ds.loader());
  EXPECT_EQ(error_code([&] { train_pipeline(ds.manifest, config, ex); }), ErrorCode::kProvenanceMismatch);
}

TEST(FeatureExtractor, CachesAndDecodesOnce) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.images_per_class = 2;
  const auto ds = all_train(spec);
  std::atomic<int> loads{0};
  const ImageLoader counting = [&](const DatasetManifest& m, const ManifestEntry& e) {
    ++loads;
    return ds.loader()(m, e);
  };
  const StubBackend base{BackendConfig{}};
  const auto config = small_config();
  FeatureStore store;
  const FeatureExtractor ex(backend_for(base, config), config.pool_size, &store, nullptr, counting);
  const auto& entry = ds.manifest.entries().front();
  const auto both = ex.features_all(ds.manifest, entry, true);
  ASSERT_EQ(both.size(), 2u);
  EXPECT_EQ(loads.load(), 1);
  EXPECT_FALSE(both[0].provenance.flipped);
  EXPECT_TRUE(both[1].provenance.flipped);
  EXPECT_TRUE(store.contains(entry.image_id, true));
  const auto again = ex.features(ds.manifest, entry, true);
  EXPECT_EQ(loads.load(), 1);
  EXPECT_EQ(again.values, both[1].values);
}

TEST(FeatureExtractor, MissingBoxUsesDetector) {
  // Wide image: the stub detector proposes the left tile first.
  SyntheticSpec spec;
  spec.classes = 2;
  spec.images_per_class = 1;
  const auto ds = all_train(spec);
  RgbImage wide(128, 64);
  const auto& src = ds.images.begin()->second;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) wide.at(x, y, c) = src.at(x, y, c);
  const ImageLoader loader = [&](const DatasetManifest&, const ManifestEntry&) { return wide; };
  const StubBackend base{BackendConfig{}};
  const auto config = small_config();
  const auto backend = backend_for(base, config);
  StubDetector det;
  const FeatureExtractor with_det(backend, config.pool_size, nullptr, &det, loader);
  const FeatureExtractor without(backend, config.pool_size, nullptr, nullptr, loader);
  const auto& entry = ds.manifest.entries().front();
  ASSERT_FALSE(entry.box.has_value());
  const auto top = det.detect_heads(wide).front().box;
  EXPECT_EQ(with_det.features(ds.manifest, entry, false).values, with_det.features(wide, top, false).values);
  EXPECT_EQ(without.features(ds.manifest, entry, false).values,
            without.features(wide, full_image_box(), false).values);
}

TEST(Identify, FlipSymmetryNearOptimum) {
  // With flip augmentation the optimal model scores an image and its mirror
  // identically. The solver stops early, so confidences agree to within a
  // bound that shrinks with its tolerance; the candidate order is identical.
  SyntheticSpec spec;
  spec.classes = 6;
  spec.images_per_class = 5;
  spec.cell_noise = 0.1;
  const auto ds = all_train(spec);
  SyntheticSpec fresh = spec;
  fresh.seed = 99;
  const auto queries = make_synthetic_dataset(fresh);
  const StubBackend base{BackendConfig{}};
  for (const auto& [tolerance, bound] : {std::pair{1e-3, 2e-3}, std::pair{1e-8, 1e-6}}) {
    auto config = small_config();
    config.svm.tolerance = tolerance;
    config.svm.max_epochs = 100000;
    const auto backend = backend_for(base, config);
    const FeatureExtractor ex(backend, config.pool_size, nullptr, nullptr, ds.loader());
    const auto model = train_pipeline(ds.manifest, config, ex);
    for (const auto& [id, image] : queries.images) {
      const auto a = identify(model, {Query{image}}, *backend);
      const auto b = identify(model, {Query{mirror(image)}}, *backend);
      ASSERT_EQ(a.candidates.size(), b.candidates.size());
      for (std::size_t i = 0; i < a.candidates.size(); ++i) {
        EXPECT_EQ(a.candidates[i].individual_id, b.candidates[i].individual_id) << id;
        EXPECT_NEAR(a.candidates[i].confidence, b.candidates[i].confidence, bound) << id << " tol " << tolerance;
      }
    }
  }
}

TEST(Identify, MultiQueryAggregatesAndChecksProvenance) {
  SyntheticSpec spec;
  spec.classes = 4;
  spec.images_per_class = 3;
  const auto ds = all_train(spec);
  const StubBackend base{BackendConfig{}};
  const auto config = small_config();
  const auto backend = backend_for(base, config);
  const FeatureExtractor ex(backend, config.pool_size, nullptr, nullptr, ds.loader());
  const auto model = train_pipeline(ds.manifest, config, ex);
  const auto& e = ds.manifest.entries();
  const auto v0 = ex.features(ds.manifest, e[0], false);
  const auto v1 = ex.features(ds.manifest, e[4], false);
  const auto r = identify_features(model, {v0, v1});
  EXPECT_EQ(r.query_image_count, 2);
  const auto expect = aggregate({score_features(model, v0), score_features(model, v1)});
  for (const auto& c : r.candidates) {
    EXPECT_DOUBLE_EQ(c.confidence, expect.values[model.svm.class_index(c.individual_id)]);
  }
  EXPECT_EQ(error_code([&] { identify(model, {}, *backend); }), ErrorCode::kInvalidArgument);
  const auto wrong = backend_for(base, [&] {
    auto c = config;
    c.input_resolution = 96;
    return c;
  }());
  EXPECT_EQ(error_code([&] { identify(model, {Query{ds.images.begin()->second}}, *wrong); }),
            ErrorCode::kProvenanceMismatch);
}

TEST(RepresentativeImages, LargestBoxesFirst) {
  std::vector<ManifestEntry> entries;
  auto add = [&](std::string id, std::string who, Split split, double side) {
    ManifestEntry e = fixture::entry(id, who, split);
    e.box = BoundingBox{0, 0, side, side};
    entries.push_back(e);
  };
  add("a1", "A", Split::kTrain, 0.2);
  add("a2", "A", Split::kTrain, 0.5);
  add("a3", "A", Split::kTest, 0.9);
  add("a4", "A", Split::kTrain, 0.5);
  add("b1", "B", Split::kTrain, 0.3);
  const DatasetManifest m(entries);
  EXPECT_EQ(representative_images(m, "A"), (std::vector<std::string>{"a2", "a4", "a1"}));
  EXPECT_EQ(representative_images(m, "A", 1), (std::vector<std::string>{"a2"}));
  EXPECT_TRUE(representative_images(m, "nobody").empty());
}
