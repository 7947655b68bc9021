// Acceptance runner: one PASS/FAIL line per criterion.
//
//   herdid_acceptance               run everything
//   herdid_acceptance --only NAME   run one criterion
//
// Exit status is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "herdid/detection.hpp"
#include "herdid/evaluation.hpp"
#include "herdid/json.hpp"
#include "herdid/pca.hpp"
#include "herdid/pipeline.hpp"
#include "herdid/pooling.hpp"
#include "herdid/random.hpp"
#include "herdid/service.hpp"
#include "herdid/svm.hpp"
#include "herdid/synthetic.hpp"
#include "oracles.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <httplib.h>

using nlohmann::json;

namespace {

// Tolerances and sizes, fixed here rather than on the command line.
constexpr int kPoolTensors = 2000;
constexpr double kPoolSeconds = 5.0;
constexpr int kPcaMatrices = 200;
constexpr double kPcaProjectionTol = 1e-8;
constexpr double kPcaOrthoTol = 1e-9;
constexpr int kSvmProblems = 60;
constexpr double kSvmGap = 1e-2;
constexpr double kSvmBoundaryTol = 1e-3;
constexpr double kSvmMarginTol = 1e-2;
constexpr int kCalibPoints = 2000;
constexpr double kCalibParamTol = 0.1;
constexpr double kCalibSumTol = 1e-9;
constexpr int kApInstances = 400;
constexpr int kApMaxBoxes = 6;
constexpr double kApOracleTol = 1e-12;
constexpr double kIouTol = 1e-12;
constexpr double kSeparableSeconds = 60.0;
constexpr int kMultiTrials = 300;
constexpr double kSingleLow = 0.4;
constexpr double kSingleHigh = 0.7;
constexpr int kSplitTarget = 505;
constexpr int kSplitSlack = 15;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome pooling() {
  std::mt19937_64 rng(11);
  const auto t0 = Clock::now();
  int mismatches = 0;
  for (int i = 0; i < kPoolTensors; ++i) {
    const int n = 2 + static_cast<int>(herdid::uniform_index(rng, 5));
    const int c = 1 + static_cast<int>(herdid::uniform_index(rng, 4));
    const int h = n + static_cast<int>(herdid::uniform_index(rng, 13 - n));
    const int w = n + static_cast<int>(herdid::uniform_index(rng, 13 - n));
    const auto t = fixture::random_tensor(rng, c, h, w);
    if (!(herdid::max_pool(t, n) == oracle::window_max(t, n))) ++mismatches;
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && secs < kPoolSeconds,
          fmt("%d tensors, %d mismatches, %.3f s (limit %.0f s)", kPoolTensors, mismatches, secs, kPoolSeconds)};
}

Outcome pca() {
  std::mt19937_64 rng(12);
  double worst_proj = 0.0, worst_ortho = 0.0;
  int increasing = 0;
  for (int i = 0; i < kPcaMatrices; ++i) {
    const int n = 2 + static_cast<int>(herdid::uniform_index(rng, 29));
    const int d = 1 + static_cast<int>(herdid::uniform_index(rng, 20));
    const int target = 1 + static_cast<int>(herdid::uniform_index(rng, d + 2));
    const Eigen::MatrixXd x = fixture::random_matrix(rng, n, d);
    const auto model = herdid::fit_pca(x, target);
    const auto ref = oracle::pca(x, target);
    if (model.output_dim() != ref.components.rows()) return {false, fmt("matrix %d: R=%d, oracle %d", i, model.output_dim(), int(ref.components.rows()))};
    const Eigen::MatrixXd p = herdid::project_rows(model, x);
    worst_proj = std::max(worst_proj, (p - ref.projections).cwiseAbs().maxCoeff());
    const Eigen::MatrixXd g = model.components * model.components.transpose();
    worst_ortho = std::max(worst_ortho, (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff());
    for (int r = 1; r < model.output_dim(); ++r) {
      if (model.explained_variance[r] > model.explained_variance[r - 1]) ++increasing;
    }
  }
  return {worst_proj <= kPcaProjectionTol && worst_ortho <= kPcaOrthoTol && increasing == 0,
          fmt("%d matrices, max |proj - oracle| %.2e (tol %.0e), max |CC^T - I| %.2e (tol %.0e), variance increases %d",
              kPcaMatrices, worst_proj, kPcaProjectionTol, worst_ortho, kPcaOrthoTol, increasing)};
}

Outcome svm() {
  std::mt19937_64 rng(13);
  double worst_gap = 0.0;
  int box_violations = 0;
  for (int p = 0; p < kSvmProblems; ++p) {
    const int n = 10 + static_cast<int>(herdid::uniform_index(rng, 191));
    const int d = 1 + static_cast<int>(herdid::uniform_index(rng, 50));
    herdid::RowMatrix x(n, d);
    std::vector<int> y(n);
    std::vector<double> upper(n);
    const double shift = 0.5 + 1.5 * herdid::uniform_real(rng);
    int positives = 0;
    for (int i = 0; i < n; ++i) {
      y[i] = herdid::uniform_real(rng) < 0.3 ? 1 : -1;
      positives += y[i] > 0;
      for (int j = 0; j < d; ++j) x(i, j) = herdid::standard_normal(rng) + (j == 0 ? shift * y[i] : 0.0);
    }
    if (positives == 0 || positives == n) {
      y[0] = -y[0];
      positives = y[0] > 0 ? 1 : n - 1;
    }
    // Default solver settings: C = 1 with balanced class weights.
    const herdid::SvmParams defaults;
    for (int i = 0; i < n; ++i) upper[i] = defaults.C * n / (2.0 * (y[i] > 0 ? positives : n - positives));
    const auto sol = herdid::solve_binary_svm(x, y, upper, defaults.bias_scale, defaults.tolerance,
                                              defaults.max_epochs, 100 + p);
    for (int i = 0; i < n; ++i) {
      if (!(sol.alpha[i] >= 0.0 && sol.alpha[i] <= upper[i])) ++box_violations;
    }
    const auto obj = oracle::svm_objectives(x, y, upper, 1.0, sol.alpha);
    worst_gap = std::max(worst_gap, obj.relative_gap());
  }

  // x = -1 is class A, x = +1 class B, C = 10: max-margin boundary at 0.
  herdid::SvmParams p1;
  p1.C = 10.0;
  const auto m1 = herdid::train_svm((Eigen::MatrixXd(2, 1) << -1.0, 1.0).finished(), {"A", "B"}, p1);
  const int b = m1.class_index("B");
  const double boundary = -m1.biases[b] / m1.weights(b, 0);
  const double margin_b = herdid::decision_scores(m1, Eigen::VectorXd::Constant(1, 1.0)).values[b];
  return {worst_gap < kSvmGap && box_violations == 0 && std::abs(boundary) <= kSvmBoundaryTol &&
              margin_b >= 1.0 - kSvmMarginTol,
          fmt("%d problems, max relative gap %.2e (limit %.0e), box violations %d, 1-D boundary %.2e (tol %.0e), "
              "score(+1) %.4f",
              kSvmProblems, worst_gap, kSvmGap, box_violations, boundary, kSvmBoundaryTol, margin_b)};
}

Outcome calibration() {
  constexpr double kA = -2.0, kB = 0.5;
  std::mt19937_64 rng(14);
  std::vector<double> margins(kCalibPoints);
  std::vector<char> labels(kCalibPoints);
  for (int i = 0; i < kCalibPoints; ++i) {
    margins[i] = -3.0 + 6.0 * herdid::uniform_real(rng);
    labels[i] = herdid::uniform_real(rng) < oracle::sigmoid(kA, kB, margins[i]);
  }
  std::unique_ptr<bool[]> flat(new bool[kCalibPoints]);
  for (int i = 0; i < kCalibPoints; ++i) flat[i] = labels[i];
  const auto fit = herdid::fit_sigmoid(margins, std::span<const bool>(flat.get(), kCalibPoints));

  // Sum-to-one over random models, including degenerate sigmoids and
  // extreme margins.
  double worst_sum = 0.0;
  for (int t = 0; t < 500; ++t) {
    const int k = 2 + static_cast<int>(herdid::uniform_index(rng, 30));
    herdid::SvmModel model;
    std::vector<herdid::PlattParams> params(k);
    for (auto& p : params) {
      p.a = -10.0 * herdid::uniform_real(rng);
      p.b = 20.0 * (herdid::uniform_real(rng) - 0.5);
    }
    model.calibration = params;
    herdid::ScoreVector m;
    for (int i = 0; i < k; ++i) {
      const double scale = std::pow(10.0, 4.0 * herdid::uniform_real(rng) - 1.0);
      m.values.push_back(scale * herdid::standard_normal(rng));
    }
    const auto probs = herdid::calibrate_margins(model, m);
    double sum = 0.0;
    for (double v : probs.values) sum += v;
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  return {std::abs(fit.a - kA) <= kCalibParamTol && std::abs(fit.b - kB) <= kCalibParamTol && worst_sum <= kCalibSumTol,
          fmt("fitted A=%.4f B=%.4f (true -2, 0.5, tol %.1f), max |sum - 1| %.2e over 500 vectors (tol %.0e)", fit.a,
              fit.b, kCalibParamTol, worst_sum, kCalibSumTol)};
}

herdid::BoundingBox box(double x, double y, double w, double h) { return {x, y, w, h}; }

Outcome detection() {
  // Two heads; predictions TP (0.9), FP (0.8), TP (0.7).
  const std::map<std::string, std::vector<herdid::BoundingBox>> gt{
      {"a", {box(0.1, 0.1, 0.2, 0.2), box(0.6, 0.6, 0.2, 0.2)}}};
  const std::map<std::string, std::vector<herdid::Detection>> pred{
      {"a", {{box(0.1, 0.1, 0.2, 0.2), 0.9}, {box(0.35, 0.0, 0.1, 0.1), 0.8}, {box(0.61, 0.6, 0.2, 0.2), 0.7}}}};
  const double hand = herdid::evaluate_detections(pred, gt, 0.5).average_precision;

  std::mt19937_64 rng(15);
  double worst = 0.0;
  int instances = 0;
  while (instances < kApInstances) {
    std::map<std::string, std::vector<herdid::BoundingBox>> g;
    std::map<std::string, std::vector<herdid::Detection>> p;
    const int images = 1 + static_cast<int>(herdid::uniform_index(rng, 3));
    auto rand_box = [&] {
      const double w = 0.05 + 0.4 * herdid::uniform_real(rng);
      const double h = 0.05 + 0.4 * herdid::uniform_real(rng);
      return box((1 - w) * herdid::uniform_real(rng), (1 - h) * herdid::uniform_real(rng), w, h);
    };
    int gt_total = 0, pred_total = 0;
    for (int im = 0; im < images; ++im) {
      const std::string id = "im" + std::to_string(im);
      auto& gb = g[id];
      auto& pb = p[id];
      const int ng = static_cast<int>(herdid::uniform_index(rng, 4));
      const int np = static_cast<int>(herdid::uniform_index(rng, 4));
      for (int i = 0; i < ng; ++i) gb.push_back(rand_box());
      for (int i = 0; i < np; ++i) {
        herdid::BoundingBox b = rand_box();
        if (!gb.empty() && herdid::uniform_real(rng) < 0.6) {
          // Jittered copy of a ground-truth box so matches actually happen.
          const auto& src = gb[herdid::uniform_index(rng, gb.size())];
          b = box(src.x, src.y, src.w, src.h);
          b.x = std::clamp(b.x + 0.05 * (herdid::uniform_real(rng) - 0.5), 0.0, 1.0 - b.w);
          b.y = std::clamp(b.y + 0.05 * (herdid::uniform_real(rng) - 0.5), 0.0, 1.0 - b.h);
        }
        pb.push_back({b, herdid::uniform_real(rng)});
      }
      gt_total += ng;
      pred_total += np;
    }
    // At most kApMaxBoxes boxes (ground truth plus predictions) per instance.
    if (gt_total == 0 || gt_total + pred_total > kApMaxBoxes) continue;
    ++instances;
    const double got = herdid::evaluate_detections(p, g, 0.5).average_precision;
    worst = std::max(worst, std::abs(got - oracle::staircase_ap(p, g, 0.5)));
  }

  const double iou = herdid::iou(box(0, 0, 0.5, 0.5), box(0.25, 0, 0.5, 0.5));
  // Exact: the double nearest 5/6.
  return {hand == 5.0 / 6.0 && worst <= kApOracleTol && std::abs(iou - 1.0 / 3.0) <= kIouTol,
          fmt("hand AP %.17g (5/6), max |AP - oracle| %.2e over %d instances (tol %.0e), hand IoU %.17g", hand, worst,
              kApInstances, kApOracleTol, iou)};
}

herdid::StubBackend stub_backend() { return herdid::StubBackend(herdid::BackendConfig{}); }

Outcome separable() {
  const auto t0 = Clock::now();
  const auto ds = herdid::make_synthetic_dataset(fixture::separable_spec());
  const herdid::PipelineConfig config;
  const auto base = stub_backend();
  const herdid::FeatureExtractor extractor(herdid::backend_for(base, config), config.pool_size, nullptr, nullptr,
                                           ds.loader());
  const auto model = herdid::train_pipeline(ds.manifest, config, extractor);
  int hits = 0, total = 0;
  for (const auto& e : ds.manifest.subset(herdid::Split::kTest)) {
    const auto r = herdid::identify_features(model, {extractor.features(ds.manifest, e, false)});
    hits += r.candidates.front().individual_id == e.individual_id;
    ++total;
  }
  const double secs = seconds_since(t0);
  const double acc = total ? static_cast<double>(hits) / total : 0.0;
  return {total > 0 && hits == total && secs < kSeparableSeconds,
          fmt("top-1 %.3f (%d/%d held-out images), %.2f s (limit %.0f s)", acc, hits, total, secs, kSeparableSeconds)};
}

Outcome multi_image() {
  // A trial is one seeded dataset, split, model and probe set.
  const herdid::GridRow row{"activation_40", std::nullopt, 64};
  const auto base = stub_backend();
  double sum1 = 0.0, sum2 = 0.0;
  int probes1 = 0, probes2 = 0;
  for (int t = 0; t < kMultiTrials; ++t) {
    const auto ds = herdid::make_synthetic_dataset(fixture::noisy_spec(1000 + t));
    herdid::EvaluationOptions opt;
    opt.ks = {1};
    opt.seed = t;
    opt.loader = ds.loader();
    opt.base.svm.threads = 1;
    const auto report = herdid::run_evaluation({row}, ds.manifest, base, opt);
    const auto* r1 = report.table(1).front();
    const auto* r2 = report.table(2).front();
    sum1 += r1->overall[0];
    sum2 += r2->overall[0];
    probes1 += r1->probes;
    probes2 += r2->probes;
  }
  const double single = sum1 / kMultiTrials;
  const double pair = sum2 / kMultiTrials;
  return {single >= kSingleLow && single <= kSingleHigh && pair - single > 0.0,
          fmt("%d trials (%d single / %d pair probes): top-1 single %.4f (band [%.1f, %.1f]), pair %.4f, gain %+.4f",
              kMultiTrials, probes1, probes2, single, kSingleLow, kSingleHigh, pair, pair - single)};
}

std::string render_report(const herdid::EvaluationReport& r) {
  json j;
  herdid::to_json(j, r);
  return j.dump(2) + "\n" + r.to_text();
}

Outcome report_shape() {
  const std::vector<std::string> expected{"max_4 act. 40", "max_5 act. 40", "max_6 act. 40", "max_4 act. 43",
                                          "max_5 act. 43", "max_6 act. 43", "no pool act. 43"};
  const auto ds = herdid::make_synthetic_dataset(fixture::separable_spec());
  const auto base = stub_backend();
  herdid::EvaluationOptions opt;
  opt.seed = 5;
  opt.loader = ds.loader();
  const auto first = herdid::run_evaluation(herdid::default_grid(), ds.manifest, base, opt);
  const auto second = herdid::run_evaluation(herdid::default_grid(), ds.manifest, base, opt);

  std::string problems;
  if (first.ks != std::vector<int>{1, 5, 10, 20}) problems += " ks";
  for (int size : {1, 2}) {
    const auto rows = first.table(size);
    if (rows.size() != expected.size()) {
      problems += fmt(" table%d has %zu rows", size, rows.size());
      continue;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i]->config.label() != expected[i]) problems += " label:" + rows[i]->config.label();
      if (rows[i]->overall.size() != 4 || rows[i]->per_class.size() != 4) problems += " columns";
    }
  }
  const std::string a = render_report(first);
  const std::string b = render_report(second);
  if (a != b) problems += " outputs differ";
  return {problems.empty(), problems.empty() ? fmt("2 tables x 7 rows x k{1,5,10,20}; repeated run byte-identical (%zu bytes)", a.size())
                                             : "problems:" + problems};
}

Outcome split() {
  const auto hist = fixture::long_tail_histogram(276, 2078, 1, 22, 4);
  const auto sizes = fixture::sizes_from_histogram(hist, 1);
  const auto manifest = herdid::stratified_split(fixture::manifest_with_sizes(sizes), 0.25, 3);
  int test = 0;
  for (const auto& e : manifest.entries()) test += e.split == herdid::Split::kTest;
  std::map<std::string, int> train;
  for (const auto& id : manifest.individuals()) train[id] = 0;
  for (const auto& e : manifest.entries()) train[e.individual_id] += e.split == herdid::Split::kTrain;
  int starved = 0;
  for (const auto& [id, n] : train) starved += n == 0;
  const int classes = static_cast<int>(sizes.size());
  const int images = static_cast<int>(manifest.size());
  const bool shape_ok = classes == 276 && images == 2078 && sizes.back() == 1 && sizes.front() == 22;
  return {shape_ok && std::abs(test - kSplitTarget) <= kSplitSlack && starved == 0,
          fmt("%d images / %d classes (sizes %d..%d): %d test images (target %d +/- %d), classes without train %d",
              images, classes, sizes.back(), sizes.front(), test, kSplitTarget, kSplitSlack, starved)};
}

struct RunningService {
  herdid::Service service;
  int port = 0;
  std::thread thread;

  explicit RunningService(herdid::ServiceConfig cfg) : service(std::move(cfg)) {
    port = service.bind("127.0.0.1", 0);
    thread = std::thread([this] { service.listen(); });
  }
  ~RunningService() {
    service.stop();
    thread.join();
  }
};

Outcome service() {
  fixture::TempDir tmp("herdid-accept");
  const auto ds = herdid::make_synthetic_dataset(fixture::separable_spec());
  herdid::PipelineConfig config;
  config.input_resolution = 128;
  config.pool_size = 2;
  const auto base = stub_backend();
  const herdid::FeatureExtractor extractor(herdid::backend_for(base, config), config.pool_size, nullptr, nullptr,
                                           ds.loader());
  herdid::save_archive(tmp / "model.eid", herdid::train_pipeline(ds.manifest, config, extractor));

  herdid::ServiceConfig cfg;
  cfg.data_dir = tmp / "data";
  std::vector<std::string> log;
  bool ok = true;
  auto expect = [&](const std::string& step, const httplib::Result& res, int want) {
    const int got = res ? res->status : -1;
    log.push_back(step + "=" + std::to_string(got));
    if (got != want) ok = false;
    return res && got == want;
  };
  const auto test_entry = ds.manifest.subset(herdid::Split::kTest).front();
  const std::string png = herdid::encode_png(ds.images.at(test_entry.image_id));

  {
    RunningService s(cfg);
    httplib::Client cli("127.0.0.1", s.port);
    expect("identify-no-model", cli.Post("/api/v1/identify", R"({"items":[{"image_id":"x"}]})", "application/json"), 409);
  }
  cfg.initial_model = tmp / "model.eid";
  json first_candidates;
  std::string image_id;
  json query;
  {
    RunningService s(cfg);
    httplib::Client cli("127.0.0.1", s.port);
    expect("confirm-no-session", cli.Post("/api/v1/confirmations", R"({"individual_id":"ind000"})", "application/json"), 409);
    auto sess = cli.Post("/api/v1/sessions", "", "application/json");
    if (expect("session", sess, 201)) {
      const auto sid = json::parse(sess->body).at("session_id").get<std::string>();
      expect("confirm-before-rank",
             cli.Post("/api/v1/confirmations", json{{"session_id", sid}, {"individual_id", "ind000"}}.dump(), "application/json"), 409);
    }
    auto up = cli.Post("/api/v1/images", png, "image/png");
    if (expect("upload", up, 200)) image_id = json::parse(up->body).at("image_id").get<std::string>();
    auto det = cli.Post("/api/v1/images/" + image_id + "/detect", "", "application/json");
    json box = nullptr;
    if (expect("detect", det, 200)) {
      const auto dets = json::parse(det->body).at("detections");
      if (!dets.empty()) box = dets.front();
    }
    query = json{{"items", json::array({json{{"image_id", image_id}, {"box", box}}})}};
    auto idr = cli.Post("/api/v1/identify", query.dump(), "application/json");
    if (expect("identify", idr, 200)) {
      const auto body = json::parse(idr->body);
      first_candidates = body.at("candidates");
      const auto top = first_candidates.front().at("individual_id").get<std::string>();
      expect("confirm",
             cli.Post("/api/v1/confirmations",
                      json{{"session_id", body.at("session_id")}, {"individual_id", top}}.dump(), "application/json"),
             201);
      if (top != test_entry.individual_id) {
        ok = false;
        log.push_back("top1=" + top);
      }
    }
    auto conf = cli.Get("/api/v1/confirmations");
    if (expect("list-confirmations", conf, 200) && json::parse(conf->body).at("confirmations").size() != 1) ok = false;
  }
  {
    RunningService s(cfg);
    httplib::Client cli("127.0.0.1", s.port);
    auto idr = cli.Post("/api/v1/identify", query.dump(), "application/json");
    if (expect("identify-after-restart", idr, 200)) {
      const auto again = json::parse(idr->body).at("candidates");
      const bool same = again == first_candidates;
      log.push_back(same ? "restart-identical" : "restart-differs");
      if (!same) ok = false;
    }
  }
  std::string detail;
  for (const auto& l : log) detail += (detail.empty() ? "" : " ") + l;
  return {ok, detail};
}

struct Criterion {
  const char* name;
  const char* title;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"pooling", "pooling oracle", pooling},
    {"pca", "PCA oracle", pca},
    {"svm", "SVM solver", svm},
    {"calibration", "calibration recovery", calibration},
    {"detection", "detection metrics", detection},
    {"separable", "end-to-end separable fixture", separable},
    {"multi_image", "multi-image benefit", multi_image},
    {"report_shape", "report shape", report_shape},
    {"split", "split arithmetic", split},
    {"service", "service integration", service},
};

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = argv[++i];
  }
  int failures = 0, ran = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && only != c.name) continue;
    ++ran;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& ex) {
      o = {false, std::string("exception: ") + ex.what()};
    }
    std::printf("%s  %-30s %s\n", o.pass ? "PASS" : "FAIL", c.title, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion '%s'\n", only.c_str());
    return 64;
  }
  return failures;
}
