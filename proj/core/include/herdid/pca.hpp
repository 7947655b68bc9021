#pragma once

#include <Eigen/Dense>

#include "herdid/types.hpp"

namespace herdid {

struct PcaModel {
  Eigen::VectorXd mean;                // D
  Eigen::MatrixXd components;          // R x D, orthonormal rows
  Eigen::VectorXd explained_variance;  // R, non-increasing
  int requested_dim = 0;

  int input_dim() const { return static_cast<int>(mean.size()); }
  int output_dim() const { return static_cast<int>(components.rows()); }
  /// True when R had to be clamped below the requested dimension.
  bool clamped() const { return output_dim() < requested_dim; }
};

/// The reduction target: multiplier x the number of original (not
/// flip-augmented) training images, rounded.
int pca_target_dim(int n_train_images, double multiplier = 2.0);

/// Fits PCA on the rows of X. R = min(target_dim, N-1, D); components are
/// the top-R right singular vectors of the centered matrix, each signed so
/// that its largest-magnitude entry is positive. Works through the smaller
/// of the N x N Gram matrix and the D x D scatter matrix.
/// Throws Error(kInsufficientSamples) for N < 2.
PcaModel fit_pca(const Eigen::MatrixXd& X, int target_dim);

/// components * (v - mean).
Eigen::VectorXd project(const PcaModel& model, const Eigen::Ref<const Eigen::VectorXd>& v);
/// Same, for a feature vector; marks the result pca_applied.
FeatureVector project(const PcaModel& model, const FeatureVector& v);
/// Projects every row of X.
Eigen::MatrixXd project_rows(const PcaModel& model, const Eigen::MatrixXd& X);

}  // namespace herdid
