#include "herdid/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "herdid/error.hpp"
#include "herdid/fs_util.hpp"
#include "herdid/random.hpp"
#include "parallel.hpp"

namespace herdid {

namespace {

void check_k(int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
}

std::vector<int> ranks_of(const std::vector<Ranking>& rankings, const std::vector<std::string>& truths) {
  if (rankings.size() != truths.size()) {
    throw Error(ErrorCode::kDimensionMismatch, std::to_string(rankings.size()) + " rankings but " +
                                                   std::to_string(truths.size()) + " truths");
  }
  std::vector<int> ranks(rankings.size());
  for (std::size_t i = 0; i < rankings.size(); ++i) ranks[i] = rank_of(rankings[i], truths[i]);
  return ranks;
}

bool hit(int rank, int k) { return rank >= 1 && rank <= k; }

}  // namespace

double top_k_accuracy(const std::vector<int>& ranks, int k) {
  check_k(k);
  if (ranks.empty()) throw Error(ErrorCode::kInvalidArgument, "no probes to score");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](int r) { return hit(r, k); });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double per_class_top_k(const std::vector<int>& ranks, const std::vector<std::string>& truths, int k) {
  check_k(k);
  if (ranks.size() != truths.size()) throw Error(ErrorCode::kDimensionMismatch, "ranks and truths differ in length");
  if (ranks.empty()) throw Error(ErrorCode::kInvalidArgument, "no probes to score");
  std::map<std::string, std::pair<int, int>> per_class;  // hits, total
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    auto& c = per_class[truths[i]];
    c.first += hit(ranks[i], k) ? 1 : 0;
    ++c.second;
  }
  double sum = 0.0;
  for (const auto& [id, c] : per_class) sum += static_cast<double>(c.first) / c.second;
  return sum / static_cast<double>(per_class.size());
}

double top_k_accuracy(const std::vector<Ranking>& rankings, const std::vector<std::string>& truths, int k) {
  return top_k_accuracy(ranks_of(rankings, truths), k);
}

double per_class_top_k(const std::vector<Ranking>& rankings, const std::vector<std::string>& truths, int k) {
  return per_class_top_k(ranks_of(rankings, truths), truths, k);
}

std::vector<Probe> build_probes(const DatasetManifest& manifest, int probe_size, std::uint64_t seed) {
  if (probe_size != 1 && probe_size != 2) throw Error(ErrorCode::kInvalidArgument, "probe_size must be 1 or 2");
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& e : manifest.entries()) {
    if (e.split == Split::kTest) by_class[e.individual_id].push_back(e.image_id);
  }
  if (by_class.empty()) throw Error(ErrorCode::kInsufficientSamples, "manifest has no test images");

  std::vector<Probe> probes;
  for (auto& [id, images] : by_class) {
    std::sort(images.begin(), images.end());
    std::mt19937_64 rng(mix_seed(seed, hash_string(id)));
    fisher_yates(std::span<std::string>(images), rng);
    const std::size_t m = images.size();
    for (std::size_t start = 0; start < m; start += static_cast<std::size_t>(probe_size)) {
      Probe p;
      p.individual_id = id;
      for (int j = 0; j < probe_size && static_cast<std::size_t>(j) < m; ++j) {
        p.image_ids.push_back(images[(start + static_cast<std::size_t>(j)) % m]);
      }
      p.short_probe = static_cast<int>(p.image_ids.size()) < probe_size;
      probes.push_back(std::move(p));
    }
  }
  return probes;
}

// ---------------------------------------------------------------------------
// Grid

std::string GridRow::label() const {
  std::string layer = layer_name;
  if (const auto pos = layer.rfind('_'); pos != std::string::npos) layer = layer.substr(pos + 1);
  return (pool_size ? "max_" + std::to_string(*pool_size) : std::string("no pool")) + " act. " + layer;
}

std::vector<GridRow> default_grid() {
  return {
      {"activation_40", 4, 512}, {"activation_40", 5, 512}, {"activation_40", 6, 512},
      {"activation_43", 4, 512}, {"activation_43", 5, 512}, {"activation_43", 6, 512},
      {"activation_43", std::nullopt, 256},
  };
}

void to_json(nlohmann::json& j, const GridRow& r) {
  j = {{"label", r.label()},
       {"layer_name", r.layer_name},
       {"pool_size", r.pool_size ? nlohmann::json(*r.pool_size) : nlohmann::json(nullptr)},
       {"input_resolution", r.input_resolution}};
}

void from_json(const nlohmann::json& j, GridRow& r) {
  r.layer_name = j.at("layer_name").get<std::string>();
  r.input_resolution = j.value("input_resolution", 512);
  const auto& p = j.contains("pool_size") ? j.at("pool_size") : nlohmann::json(nullptr);
  if (p.is_null()) {
    r.pool_size.reset();
  } else {
    r.pool_size = p.get<int>();
  }
}

std::vector<GridRow> load_grid(const std::filesystem::path& path) {
  try {
    auto j = nlohmann::json::parse(read_file(path));
    if (j.is_object()) j = j.at("rows");
    return j.get<std::vector<GridRow>>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Report

std::vector<const ReportRow*> EvaluationReport::table(int probe_size) const {
  std::vector<const ReportRow*> out;
  for (const auto& r : rows) {
    if (r.probe_size == probe_size) out.push_back(&r);
  }
  return out;
}

std::string EvaluationReport::to_text() const {
  std::set<int> sizes;
  for (const auto& r : rows) sizes.insert(r.probe_size);
  std::size_t label_width = 6;
  for (const auto& r : rows) label_width = std::max(label_width, r.config.label().size());

  std::ostringstream out;
  char buf[64];
  bool first = true;
  for (int size : sizes) {
    if (!first) out << '\n';
    first = false;
    out << "Max pooling with " << size << (size == 1 ? " image" : " images") << '\n';
    std::string head = std::string(label_width, ' ');
    for (int k : ks) {
      std::snprintf(buf, sizeof buf, "  %6s", ("Top " + std::to_string(k)).c_str());
      head += buf;
    }
    head += "  |";
    for (int k : ks) {
      std::snprintf(buf, sizeof buf, "  %6s", ("pc " + std::to_string(k)).c_str());
      head += buf;
    }
    out << head << '\n' << std::string(head.size(), '-') << '\n';
    for (const ReportRow* r : table(size)) {
      std::string line = r->config.label();
      line.resize(label_width, ' ');
      for (double v : r->overall) {
        std::snprintf(buf, sizeof buf, "  %6.3f", v);
        line += buf;
      }
      line += "  |";
      for (double v : r->per_class) {
        std::snprintf(buf, sizeof buf, "  %6.3f", v);
        line += buf;
      }
      out << line << '\n';
    }
  }
  return out.str();
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  nlohmann::json tables = nlohmann::json::object();
  std::set<int> sizes;
  for (const auto& row : r.rows) sizes.insert(row.probe_size);
  for (int size : sizes) {
    auto& t = tables["probe_size_" + std::to_string(size)] = nlohmann::json::array();
    for (const ReportRow* row : r.table(size)) {
      t.push_back({{"config", row->config},
                   {"probe_size", row->probe_size},
                   {"probes", row->probes},
                   {"short_probes", row->short_probes},
                   {"overall", row->overall},
                   {"per_class", row->per_class}});
    }
  }
  j = {{"metadata",
        {{"seed", r.seed},
         {"backend", r.backend},
         {"ks", r.ks},
         {"train_images", r.train_images},
         {"test_images", r.test_images},
         {"train_classes", r.train_classes},
         {"test_classes", r.test_classes}}},
       {"tables", tables}};
}

// ---------------------------------------------------------------------------
// Runner

std::vector<Ranking> rank_probes(const ModelArchive& model, const std::vector<Probe>& probes,
                                 const std::map<std::string, ScoreVector>& scores) {
  std::vector<Ranking> out;
  out.reserve(probes.size());
  for (const auto& p : probes) {
    std::vector<ScoreVector> parts;
    for (const auto& id : p.image_ids) {
      auto it = scores.find(id);
      if (it == scores.end()) throw Error(ErrorCode::kNotFound, "no scores for test image '" + id + "'");
      parts.push_back(it->second);
    }
    out.push_back(make_ranking(model.svm, aggregate(parts), static_cast<int>(parts.size())));
  }
  return out;
}

EvaluationReport run_evaluation(const std::vector<GridRow>& grid, const DatasetManifest& manifest,
                                const EmbeddingBackend& backend, const EvaluationOptions& options) {
  if (grid.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluation grid is empty");
  for (int k : options.ks) check_k(k);

  EvaluationReport report;
  report.ks = options.ks;
  report.seed = options.seed;
  report.backend = backend.kind();
  const auto train = manifest.subset(Split::kTrain);
  const auto test = manifest.subset(Split::kTest);
  report.train_images = static_cast<int>(train.size());
  report.test_images = static_cast<int>(test.size());
  {
    std::set<std::string> tr, te;
    for (const auto& e : train) tr.insert(e.individual_id);
    for (const auto& e : test) te.insert(e.individual_id);
    report.train_classes = static_cast<int>(tr.size());
    report.test_classes = static_cast<int>(te.size());
  }

  std::map<int, std::vector<Probe>> probes;
  for (int size : options.probe_sizes) probes[size] = build_probes(manifest, size, options.seed);

  std::vector<std::vector<ReportRow>> per_row(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const GridRow& row = grid[g];
    PipelineConfig cfg = options.base;
    cfg.layer_name = row.layer_name;
    cfg.input_resolution = row.input_resolution;
    cfg.pool_size = row.pool_size;

    std::unique_ptr<FeatureStore> store;
    if (!options.feature_cache.empty()) {
      store = std::make_unique<FeatureStore>(options.feature_cache / feature_store_dirname(cfg.feature_provenance()));
    }
    const FeatureExtractor extractor(backend_for(backend, cfg), cfg.pool_size, store.get(), nullptr, options.loader);
    const ModelArchive model = train_pipeline(manifest, cfg, extractor);

    std::vector<ScoreVector> test_scores(test.size());
    detail::parallel_for(static_cast<int>(test.size()), cfg.svm.threads, [&](int i) {
      test_scores[i] = score_features(model, extractor.features(manifest, test[i], false));
    });
    std::map<std::string, ScoreVector> scores;
    for (std::size_t i = 0; i < test.size(); ++i) scores.emplace(test[i].image_id, std::move(test_scores[i]));
    if (store) store->flush();

    for (const auto& [size, ps] : probes) {
      const auto rankings = rank_probes(model, ps, scores);
      std::vector<std::string> truths;
      for (const auto& p : ps) truths.push_back(p.individual_id);
      const auto ranks = ranks_of(rankings, truths);
      ReportRow rr;
      rr.config = row;
      rr.probe_size = size;
      rr.probes = static_cast<int>(ps.size());
      rr.short_probes = static_cast<int>(std::count_if(ps.begin(), ps.end(), [](const Probe& p) { return p.short_probe; }));
      for (int k : options.ks) {
        rr.overall.push_back(top_k_accuracy(ranks, k));
        rr.per_class.push_back(per_class_top_k(ranks, truths, k));
      }
      per_row[g].push_back(std::move(rr));
    }
  }
  for (int size : options.probe_sizes) {
    for (const auto& rows : per_row) {
      for (const auto& r : rows) {
        if (r.probe_size == size) report.rows.push_back(r);
      }
    }
  }
  return report;
}

}  // namespace herdid
