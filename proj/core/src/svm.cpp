#include "herdid/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <random>

#include "herdid/error.hpp"
#include "herdid/random.hpp"
#include "parallel.hpp"

namespace herdid {

std::string to_string(ClassWeightMode mode) {
  return mode == ClassWeightMode::kBalanced ? "balanced" : "uniform";
}

ClassWeightMode class_weight_mode_from_string(const std::string& text) {
  if (text == "balanced") return ClassWeightMode::kBalanced;
  if (text == "uniform") return ClassWeightMode::kUniform;
  throw Error(ErrorCode::kInvalidArgument, "unknown class weight mode '" + text + "'");
}

// ---------------------------------------------------------------------------
// Binary solver

BinarySvmSolution solve_binary_svm(const RowMatrix& X, std::span<const int> y,
                                   std::span<const double> upper, double bias_scale, double tolerance,
                                   int max_epochs, std::uint64_t seed) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (static_cast<Eigen::Index>(y.size()) != n || static_cast<Eigen::Index>(upper.size()) != n) {
    throw Error(ErrorCode::kDimensionMismatch, "labels/bounds do not match the sample count");
  }
  BinarySvmSolution sol;
  sol.w = Eigen::VectorXd::Zero(d + 1);
  sol.alpha = Eigen::VectorXd::Zero(n);

  std::vector<double> qd(n);
  for (Eigen::Index i = 0; i < n; ++i) qd[i] = X.row(i).squaredNorm() + bias_scale * bias_scale;

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);

  auto w_head = sol.w.head(d);
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    fisher_yates(std::span<Eigen::Index>(order), rng);
    double max_violation = 0.0;
    for (Eigen::Index i : order) {
      const double yi = y[i];
      const double ub = upper[i];
      double& a = sol.alpha[i];
      const double g = yi * (w_head.dot(X.row(i).transpose()) + sol.w[d] * bias_scale) - 1.0;

      double pg = g;
      if (a <= 0.0) {
        pg = std::min(g, 0.0);
      } else if (a >= ub) {
        pg = std::max(g, 0.0);
      }
      max_violation = std::max(max_violation, std::abs(pg));
      if (std::abs(pg) <= 1e-12) continue;

      const double old = a;
      a = qd[i] > 0.0 ? std::clamp(old - g / qd[i], 0.0, ub) : ub;
      const double step = (a - old) * yi;
      if (step != 0.0) {
        w_head.noalias() += step * X.row(i).transpose();
        sol.w[d] += step * bias_scale;
      }
    }
    sol.stats.epochs = epoch + 1;
    sol.stats.max_violation = max_violation;
    if (max_violation < tolerance) {
      sol.stats.converged = true;
      break;
    }
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Platt scaling

double PlattParams::operator()(double margin) const {
  const double t = a * margin + b;
  // 1 / (1 + e^t), evaluated without overflow.
  return t >= 0.0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
}

PlattParams fit_sigmoid(std::span<const double> margins, std::span<const bool> positive) {
  if (margins.size() != positive.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "margins and labels differ in length");
  }
  PlattParams fallback;
  fallback.degenerate = true;
  const std::size_t n = margins.size();
  if (n == 0) return fallback;
  const double prior1 = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const double prior0 = static_cast<double>(n) - prior1;
  const auto [lo, hi] = std::minmax_element(margins.begin(), margins.end());
  if (prior1 == 0 || prior0 == 0 || *lo == *hi) return fallback;

  const double hi_target = (prior1 + 1.0) / (prior1 + 2.0);
  const double lo_target = 1.0 / (prior0 + 2.0);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = positive[i] ? hi_target : lo_target;

  constexpr int kMaxIter = 100;
  constexpr double kMinStep = 1e-10;
  constexpr double kSigma = 1e-12;
  constexpr double kEps = 1e-5;

  auto objective = [&](double a, double b) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double fapb = margins[i] * a + b;
      f += fapb >= 0 ? t[i] * fapb + std::log1p(std::exp(-fapb))
                     : (t[i] - 1.0) * fapb + std::log1p(std::exp(fapb));
    }
    return f;
  };

  double a = 0.0;
  double b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double fval = objective(a, b);
  for (int iter = 0; iter < kMaxIter; ++iter) {
    double h11 = kSigma, h22 = kSigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double fapb = margins[i] * a + b;
      double p, q;
      if (fapb >= 0) {
        p = std::exp(-fapb) / (1.0 + std::exp(-fapb));
        q = 1.0 / (1.0 + std::exp(-fapb));
      } else {
        p = 1.0 / (1.0 + std::exp(fapb));
        q = std::exp(fapb) / (1.0 + std::exp(fapb));
      }
      const double d2 = p * q;
      h11 += margins[i] * margins[i] * d2;
      h22 += d2;
      h21 += margins[i] * d2;
      const double d1 = t[i] - p;
      g1 += margins[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < kEps && std::abs(g2) < kEps) break;

    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= kMinStep) {
      const double na = a + step * da;
      const double nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na;
        b = nb;
        fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < kMinStep) break;  // line search failed; keep the best point
  }
  if (!(a < 0.0) || !std::isfinite(a) || !std::isfinite(b)) return fallback;
  PlattParams out;
  out.a = a;
  out.b = b;
  return out;
}

// ---------------------------------------------------------------------------
// One-vs-rest

int SvmModel::class_index(const std::string& id) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), id);
  return it != classes.end() && *it == id ? static_cast<int>(it - classes.begin()) : -1;
}

namespace {

struct OvrResult {
  Eigen::MatrixXd weights;
  Eigen::VectorXd biases;
  std::vector<SolverStats> stats;
};

// Trains one binary machine per class over the rows in `rows`.
OvrResult train_ovr(const RowMatrix& X, const std::vector<int>& y, int k_classes,
                    const std::vector<double>& class_weights, const SvmParams& params,
                    const std::vector<Eigen::Index>& rows, std::uint64_t seed_salt) {
  RowMatrix sub(static_cast<Eigen::Index>(rows.size()), X.cols());
  std::vector<double> upper(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    sub.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
    upper[r] = params.C * class_weights[y[rows[r]]];
  }
  OvrResult out;
  out.weights.resize(k_classes, X.cols());
  out.biases.resize(k_classes);
  out.stats.resize(k_classes);
  detail::parallel_for(k_classes, params.threads, [&](int k) {
    std::vector<int> yk(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) yk[r] = y[rows[r]] == k ? 1 : -1;
    const auto sol = solve_binary_svm(sub, yk, upper, params.bias_scale, params.tolerance,
                                      params.max_epochs, mix_seed(params.seed, seed_salt * 1000003u + k));
    out.weights.row(k) = sol.w.head(X.cols()).transpose();
    out.biases[k] = sol.w[X.cols()] * params.bias_scale;
    out.stats[k] = sol.stats;
  });
  return out;
}

struct LabelIndex {
  std::vector<std::string> classes;
  std::vector<int> y;
};

LabelIndex index_labels(const std::vector<std::string>& labels) {
  LabelIndex li;
  li.classes = labels;
  std::sort(li.classes.begin(), li.classes.end());
  li.classes.erase(std::unique(li.classes.begin(), li.classes.end()), li.classes.end());
  li.y.reserve(labels.size());
  for (const auto& l : labels) {
    li.y.push_back(static_cast<int>(std::lower_bound(li.classes.begin(), li.classes.end(), l) -
                                    li.classes.begin()));
  }
  return li;
}

}  // namespace

SvmModel train_svm(const Eigen::MatrixXd& X, const std::vector<std::string>& labels, const SvmParams& params) {
  if (X.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "feature rows and labels differ in count");
  }
  if (X.rows() < 2) throw Error(ErrorCode::kInsufficientSamples, "SVM training needs at least 2 samples");
  if (!(params.C > 0.0)) throw Error(ErrorCode::kInvalidArgument, "SVM C must be positive");
  if (!X.allFinite()) throw Error(ErrorCode::kNonFiniteValue, "SVM features contain non-finite values");
  const LabelIndex li = index_labels(labels);
  const int k = static_cast<int>(li.classes.size());
  if (k < 2) throw Error(ErrorCode::kSingleClass, "SVM training needs at least 2 distinct labels");

  std::vector<int> counts(k, 0);
  for (int c : li.y) ++counts[c];
  std::vector<double> weights(k, 1.0);
  if (params.class_weights == ClassWeightMode::kBalanced) {
    for (int c = 0; c < k; ++c) weights[c] = static_cast<double>(X.rows()) / (static_cast<double>(k) * counts[c]);
  }

  const RowMatrix rows = X;
  std::vector<Eigen::Index> all(X.rows());
  std::iota(all.begin(), all.end(), 0);
  OvrResult ovr = train_ovr(rows, li.y, k, weights, params, all, 0);

  SvmModel m;
  m.classes = li.classes;
  m.weights = std::move(ovr.weights);
  m.biases = std::move(ovr.biases);
  m.params = params;
  m.class_weights = std::move(weights);
  m.solver_stats = std::move(ovr.stats);
  return m;
}

ScoreVector decision_scores(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != model.dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "SVM expects dim " + std::to_string(model.dim()) + ", got " +
                                                   std::to_string(v.size()));
  }
  const Eigen::VectorXd s = model.weights * v + model.biases;
  return {std::vector<double>(s.data(), s.data() + s.size()), ScoreKind::kMargin};
}

ScoreVector decision_scores(const SvmModel& model, const FeatureVector& v) {
  return decision_scores(model, Eigen::Map<const Eigen::VectorXd>(v.values.data(),
                                                                 static_cast<Eigen::Index>(v.values.size())));
}

SvmModel fit_calibration(const SvmModel& model, const Eigen::MatrixXd& X, const std::vector<std::string>& labels,
                         int folds, const std::vector<std::string>& groups, CalibrationReport* report) {
  if (folds < 2) throw Error(ErrorCode::kInvalidArgument, "calibration needs at least 2 folds");
  if (X.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw Error(ErrorCode::kDimensionMismatch, "feature rows and labels differ in count");
  }
  if (!groups.empty() && groups.size() != labels.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "group keys and labels differ in count");
  }
  if (X.cols() != model.dim()) throw Error(ErrorCode::kDimensionMismatch, "calibration features do not match model");
  const int k = model.num_classes();
  std::vector<int> y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    y[i] = model.class_index(labels[i]);
    if (y[i] < 0) throw Error(ErrorCode::kNotFound, "label '" + labels[i] + "' unknown to the model");
  }

  // Per class: groups in first-seen order, shuffled, dealt round-robin.
  const auto n = static_cast<Eigen::Index>(labels.size());
  std::vector<int> fold_of(n, -1);
  std::vector<bool> small_class(k, false);
  {
    std::vector<std::vector<std::string>> class_groups(k);
    std::map<std::string, std::vector<Eigen::Index>> members;
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::string key = groups.empty() ? std::to_string(i) : groups[i];
      auto& m = members[key];
      if (m.empty()) class_groups[y[i]].push_back(key);
      m.push_back(i);
    }
    for (int c = 0; c < k; ++c) {
      auto& g = class_groups[c];
      if (g.size() < 2) {
        small_class[c] = true;
        continue;
      }
      std::mt19937_64 rng(mix_seed(model.params.seed ^ 0xca11b, static_cast<std::uint64_t>(c)));
      fisher_yates(std::span<std::string>(g), rng);
      for (std::size_t gi = 0; gi < g.size(); ++gi) {
        for (Eigen::Index i : members[g[gi]]) fold_of[i] = static_cast<int>((gi + static_cast<std::size_t>(c)) % folds);
      }
    }
  }

  const RowMatrix rows = X;
  Eigen::MatrixXd margins(n, k);
  // In-sample margins for rows that never leave the training side.
  for (Eigen::Index i = 0; i < n; ++i) {
    if (fold_of[i] < 0) margins.row(i) = (model.weights * X.row(i).transpose() + model.biases).transpose();
  }
  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_rows, held_out;
    for (Eigen::Index i = 0; i < n; ++i) (fold_of[i] == f ? held_out : train_rows).push_back(i);
    if (held_out.empty()) continue;
    const OvrResult ovr = train_ovr(rows, y, k, model.class_weights, model.params, train_rows,
                                    static_cast<std::uint64_t>(f) + 1);
    for (Eigen::Index i : held_out) {
      margins.row(i) = (ovr.weights * X.row(i).transpose() + ovr.biases).transpose();
    }
  }

  SvmModel out = model;
  std::vector<PlattParams> calibration(k);
  CalibrationReport local;
  detail::parallel_for(k, model.params.threads, [&](int c) {
    std::vector<double> s(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    for (Eigen::Index i = 0; i < n; ++i) {
      s[i] = margins(i, c);
      pos[i] = y[i] == c;
    }
    calibration[c] = fit_sigmoid(s, std::span<const bool>(pos.get(), static_cast<std::size_t>(n)));
    calibration[c].in_sample = small_class[c];
  });
  for (int c = 0; c < k; ++c) {
    if (calibration[c].degenerate) local.degenerate_classes.push_back(model.classes[c]);
    if (calibration[c].in_sample) local.in_sample_classes.push_back(model.classes[c]);
  }
  out.calibration = std::move(calibration);
  if (report) *report = std::move(local);
  return out;
}

ScoreVector calibrate_margins(const SvmModel& model, const ScoreVector& margins) {
  if (!model.calibrated()) throw Error(ErrorCode::kCalibrationMissing, "SVM model has no calibration");
  if (margins.kind != ScoreKind::kMargin) throw Error(ErrorCode::kInvalidArgument, "expected margin scores");
  const auto& cal = *model.calibration;
  const std::size_t k = margins.values.size();
  if (k != cal.size()) throw Error(ErrorCode::kDimensionMismatch, "margin vector does not match classes");

  // log p_k = -log(1 + exp(a m + b)); normalize in log space.
  std::vector<double> logp(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double t = cal[c].a * margins.values[c] + cal[c].b;
    logp[c] = t > 0.0 ? -(t + std::log1p(std::exp(-t))) : -std::log1p(std::exp(t));
  }
  const double mx = *std::max_element(logp.begin(), logp.end());
  double total = 0.0;
  for (double& l : logp) total += (l = std::exp(l - mx));
  ScoreVector out{std::vector<double>(k), ScoreKind::kCalibrated};
  constexpr double kFloor = 1e-300;
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) sum += (out.values[c] = std::max(logp[c] / total, kFloor));
  for (double& v : out.values) v /= sum;
  return out;
}

ScoreVector calibrated_probs(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  return calibrate_margins(model, decision_scores(model, v));
}

ScoreVector calibrated_probs(const SvmModel& model, const FeatureVector& v) {
  return calibrate_margins(model, decision_scores(model, v));
}

}  // namespace herdid
