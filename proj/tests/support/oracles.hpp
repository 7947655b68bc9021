#pragma once

// Independent reference implementations used to check the library. They
// favour obviousness over speed and share no code with core/.

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "herdid/detection.hpp"
#include "herdid/types.hpp"

namespace oracle {

/// Exhaustive window maximum: out[c][i][j] = max over rows n*i..n*i+n-1 and
/// columns n*j..n*j+n-1.
herdid::ActivationTensor window_max(const herdid::ActivationTensor& t, int n);

struct Svd {
  Eigen::VectorXd singular_values;  // descending
  Eigen::MatrixXd v;                // right singular vectors as columns
};

/// One-sided Jacobi SVD of A (rows >= 1, cols >= 1).
Svd jacobi_svd(const Eigen::MatrixXd& a);

struct PcaReference {
  Eigen::MatrixXd components;  // R x D, largest-|entry| positive
  Eigen::VectorXd variance;    // R
  Eigen::MatrixXd projections;  // N x R
};

/// PCA by SVD of the centered matrix, R = min(target, N-1, D).
PcaReference pca(const Eigen::MatrixXd& x, int target);

/// Primal and dual objectives of the bias-augmented hinge SVM for a given
/// dual vector; the primal is evaluated at w(alpha).
struct SvmObjectives {
  double primal = 0.0;
  double dual = 0.0;
  double relative_gap() const;
};
SvmObjectives svm_objectives(const Eigen::MatrixXd& x, const std::vector<int>& y, const std::vector<double>& upper,
                             double bias_scale, const Eigen::VectorXd& alpha);

double iou(const herdid::BoundingBox& a, const herdid::BoundingBox& b);

/// AP from scratch: for every cutoff in descending score order the
/// matching is redone from nothing, giving (precision, recall) per cutoff;
/// AP = (1/G) * sum over m = 1..G of the best precision among cutoffs with
/// recall >= m/G.
double staircase_ap(const std::map<std::string, std::vector<herdid::Detection>>& predictions,
                    const std::map<std::string, std::vector<herdid::BoundingBox>>& truth, double threshold);

/// 1 / (1 + exp(a*s + b)).
double sigmoid(double a, double b, double s);

}  // namespace oracle
