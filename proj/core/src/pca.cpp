#include "herdid/pca.hpp"

#include <algorithm>
#include <cmath>

#include "herdid/error.hpp"

namespace herdid {

namespace {

void apply_sign_convention(Eigen::MatrixXd& components) {
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index c = 0; c < components.cols(); ++c) {
      const double a = std::abs(components(r, c));
      if (a > best) {
        best = a;
        arg = c;
      }
    }
    if (components(r, arg) < 0.0) components.row(r) *= -1.0;
  }
}

}  // namespace

int pca_target_dim(int n_train_images, double multiplier) {
  if (n_train_images < 0 || !(multiplier > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "PCA target needs n >= 0 and multiplier > 0");
  }
  return static_cast<int>(std::lround(multiplier * n_train_images));
}

PcaModel fit_pca(const Eigen::MatrixXd& X, int target_dim) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (n < 2) throw Error(ErrorCode::kInsufficientSamples, "PCA needs at least 2 samples");
  if (target_dim < 1) throw Error(ErrorCode::kInvalidArgument, "PCA target dimension must be >= 1");
  if (d < 1) throw Error(ErrorCode::kInvalidArgument, "PCA input has no columns");
  if (!X.allFinite()) throw Error(ErrorCode::kNonFiniteValue, "PCA input has non-finite values");

  PcaModel m;
  m.requested_dim = target_dim;
  m.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - m.mean.transpose();
  const Eigen::Index r = std::min<Eigen::Index>({target_dim, n - 1, d});

  Eigen::MatrixXd components(r, d);
  Eigen::VectorXd eigenvalues(r);
  if (n <= d) {
    // Gram route: eigenvectors u of Xc Xc^T map to v = Xc^T u / sigma.
    const Eigen::MatrixXd gram = centered * centered.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    if (eig.info() != Eigen::Success) throw Error(ErrorCode::kInvalidArgument, "PCA eigensolver failed");
    Eigen::MatrixXd v(d, r);
    for (Eigen::Index i = 0; i < r; ++i) {
      const Eigen::Index src = n - 1 - i;  // ascending order from the solver
      const double lambda = std::max(0.0, eig.eigenvalues()(src));
      eigenvalues(i) = lambda;
      const double sigma = std::sqrt(lambda);
      v.col(i) = sigma > 0.0 ? Eigen::VectorXd(centered.transpose() * eig.eigenvectors().col(src) / sigma)
                             : Eigen::VectorXd::Zero(d);
    }
    // Re-orthonormalize in order; also fills directions of zero variance.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(v);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, r);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (q.col(i).dot(v.col(i)) < 0.0) q.col(i) *= -1.0;
    }
    components = q.transpose();
  } else {
    const Eigen::MatrixXd scatter = centered.transpose() * centered;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scatter);
    if (eig.info() != Eigen::Success) throw Error(ErrorCode::kInvalidArgument, "PCA eigensolver failed");
    for (Eigen::Index i = 0; i < r; ++i) {
      const Eigen::Index src = d - 1 - i;
      eigenvalues(i) = std::max(0.0, eig.eigenvalues()(src));
      components.row(i) = eig.eigenvectors().col(src).transpose();
    }
  }
  apply_sign_convention(components);
  m.components = std::move(components);
  m.explained_variance = eigenvalues / static_cast<double>(n - 1);
  return m;
}

Eigen::VectorXd project(const PcaModel& model, const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != model.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "PCA expects dim " + std::to_string(model.input_dim()) +
                                                   ", got " + std::to_string(v.size()));
  }
  return model.components * (v - model.mean);
}

FeatureVector project(const PcaModel& model, const FeatureVector& v) {
  const Eigen::Map<const Eigen::VectorXd> in(v.values.data(), static_cast<Eigen::Index>(v.values.size()));
  const Eigen::VectorXd out = project(model, Eigen::VectorXd(in));
  FeatureVector f;
  f.values.assign(out.data(), out.data() + out.size());
  f.provenance = v.provenance;
  f.provenance.pca_applied = true;
  return f;
}

Eigen::MatrixXd project_rows(const PcaModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.input_dim()) {
    throw Error(ErrorCode::kDimensionMismatch, "PCA expects dim " + std::to_string(model.input_dim()) +
                                                   ", got " + std::to_string(X.cols()));
  }
  return (X.rowwise() - model.mean.transpose()) * model.components.transpose();
}

}  // namespace herdid
