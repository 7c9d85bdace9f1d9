#pragma once

#include <Eigen/Core>
#include <vector>

#include "esd/dataset.hpp"

namespace esd {

/// Gaussian-mixture prior with one component per training sample: means
/// mu_k = (u_k, v_k) and a shared block-spherical covariance
/// diag(sigma_u2 * I_du, sigma_v2 * I_dv). Weights default to 1/K.
struct SphericalGmmPrior {
  Eigen::MatrixXd means;  // K x (d_u + d_v)
  Eigen::Index d_u = 0;
  Eigen::Index d_v = 0;
  double sigma_u2 = 0.0;
  double sigma_v2 = 0.0;
  Eigen::VectorXd weights;  // length K, sums to 1

  Eigen::Index size() const { return means.rows(); }
  Eigen::Index dim_x() const { return d_u + d_v; }
  auto means_u() const { return means.leftCols(d_u); }
  auto means_v() const { return means.rightCols(d_v); }

  void validate() const;
};

/// General mixture prior with per-component dense SPD covariances. Serves as
/// the reference representation the spherical fast path is checked against.
struct DenseGmmPrior {
  Eigen::MatrixXd means;                   // K x d_x
  std::vector<Eigen::MatrixXd> covariances;  // K matrices, d_x x d_x SPD
  Eigen::VectorXd weights;                 // length K, sums to 1

  Eigen::Index size() const { return means.rows(); }
  Eigen::Index dim() const { return means.cols(); }

  void validate() const;
};

/// Linear-Gaussian observation model Y = H X + eps, eps ~ N(0, Sigma_Y).
struct ObservationModel {
  Eigen::MatrixXd h;        // d_y x d_x
  Eigen::MatrixXd sigma_y;  // d_y x d_y SPD

  Eigen::Index dim_y() const { return h.rows(); }
  Eigen::Index dim_x() const { return h.cols(); }
};

/// The conditional-sampling specialization: H = [0 | I_dv], Sigma_Y =
/// sigma_y2 * I.
ObservationModel conditional_observation(Eigen::Index d_u, Eigen::Index d_v, double sigma_y2);

/// Mean squared distance from each joint sample to its nearest neighbor,
/// divided by d_u + d_v. Exhaustive O(K^2) scan. Returns 0 (and is the
/// caller's cue to warn) when the dataset contains duplicate rows.
/// `threads` <= 0 means all cores.
double nearest_neighbor_bandwidth(const JointDataset& data, int threads = 0);

SphericalGmmPrior build_spherical_prior(const JointDataset& data, double sigma_u2,
                                        double sigma_v2);

/// Embeds the block-spherical covariance into per-component dense matrices.
DenseGmmPrior to_dense_prior(const SphericalGmmPrior& prior);

}  // namespace esd
