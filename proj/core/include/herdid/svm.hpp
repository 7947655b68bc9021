#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "herdid/types.hpp"

namespace herdid {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ClassWeightMode {
  kBalanced,  // w(k) = N / (K * N_k)
  kUniform,   // w(k) = 1
};

std::string to_string(ClassWeightMode mode);
ClassWeightMode class_weight_mode_from_string(const std::string& text);

struct SvmParams {
  double C = 1.0;
  ClassWeightMode class_weights = ClassWeightMode::kBalanced;
  /// Stop once the largest projected-gradient violation in an epoch is
  /// below this value.
  double tolerance = 1e-3;
  int max_epochs = 1000;
  /// Value of the constant feature appended to every sample; the bias is
  /// its (regularized) weight times this value.
  double bias_scale = 1.0;
  std::uint64_t seed = 1;
  /// Worker threads for per-class problems; 0 picks hardware concurrency.
  int threads = 0;
};

struct SolverStats {
  int epochs = 0;
  double max_violation = 0.0;
  bool converged = false;
};

/// Solution of one L2-regularized hinge-loss binary problem.
struct BinarySvmSolution {
  Eigen::VectorXd w;      // D + 1 entries; last is the bias-feature weight
  Eigen::VectorXd alpha;  // dual variables, alpha_i in [0, upper_i]
  SolverStats stats;
};

/// Dual coordinate descent for
///   min_w 1/2 |w|^2 + sum_i upper_i * max(0, 1 - y_i w.x~_i),
/// with x~_i = [x_i, bias_scale]. Coordinates are visited in a seeded
/// random order each epoch.
BinarySvmSolution solve_binary_svm(const RowMatrix& X, std::span<const int> y,
                                   std::span<const double> upper, double bias_scale, double tolerance,
                                   int max_epochs, std::uint64_t seed);

/// Platt sigmoid p(s) = 1 / (1 + exp(a*s + b)).
struct PlattParams {
  double a = -1.0;
  double b = 0.0;
  /// Fit was degenerate (constant margins, a single label, or a >= 0) and
  /// the fallback (-1, 0) is used.
  bool degenerate = false;
  /// Fitted on in-sample margins because the class has a single group.
  bool in_sample = false;

  double operator()(double margin) const;
};

/// Regularized maximum-likelihood sigmoid fit with Platt's smoothed targets
/// (Newton's method with backtracking).
PlattParams fit_sigmoid(std::span<const double> margins, std::span<const bool> positive);

struct SvmModel {
  std::vector<std::string> classes;  // sorted ids, K >= 2
  Eigen::MatrixXd weights;           // K x D
  Eigen::VectorXd biases;            // K
  SvmParams params;
  std::vector<double> class_weights;  // per class, aligned with classes
  std::vector<SolverStats> solver_stats;
  std::optional<std::vector<PlattParams>> calibration;

  int num_classes() const { return static_cast<int>(classes.size()); }
  int dim() const { return static_cast<int>(weights.cols()); }
  bool calibrated() const { return calibration.has_value(); }
  int class_index(const std::string& id) const;  // -1 if absent
};

enum class ScoreKind { kMargin, kCalibrated };

struct ScoreVector {
  std::vector<double> values;  // aligned with SvmModel::classes
  ScoreKind kind = ScoreKind::kMargin;
};

/// One-vs-rest training. Box bound for sample i is C * w(class of i).
/// Throws Error(kSingleClass), Error(kInsufficientSamples) or
/// Error(kNonFiniteValue).
SvmModel train_svm(const Eigen::MatrixXd& X, const std::vector<std::string>& labels,
                   const SvmParams& params = {});

/// weights_k . v + bias_k for every class.
ScoreVector decision_scores(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);
ScoreVector decision_scores(const SvmModel& model, const FeatureVector& v);

struct CalibrationReport {
  std::vector<std::string> degenerate_classes;
  std::vector<std::string> in_sample_classes;
};

/// Fits per-class Platt sigmoids to out-of-fold margins. Samples sharing a
/// group key (e.g. an image and its mirror) always land in the same fold;
/// empty `groups` puts each sample in its own group. Each class deals its
/// shuffled groups round-robin over the folds; a class with a single group
/// stays on every training side and uses in-sample margins.
SvmModel fit_calibration(const SvmModel& model, const Eigen::MatrixXd& X,
                         const std::vector<std::string>& labels, int folds,
                         const std::vector<std::string>& groups = {},
                         CalibrationReport* report = nullptr);

/// Sigmoid of every margin, normalized to sum to one. Entries lie in (0, 1).
/// Throws Error(kCalibrationMissing) for an uncalibrated model.
ScoreVector calibrated_probs(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);
ScoreVector calibrated_probs(const SvmModel& model, const FeatureVector& v);
/// Same, starting from margins.
ScoreVector calibrate_margins(const SvmModel& model, const ScoreVector& margins);

}  // namespace herdid
