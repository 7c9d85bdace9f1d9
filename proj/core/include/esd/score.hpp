#pragma once

#include <Eigen/Core>

#include "esd/prior.hpp"
#include "esd/schedule.hpp"

namespace esd {

/// Posterior responsibilities of the mixture components given the diffusion
/// state z_t and the observation y. weights = softmax(log_weights).
struct ComponentWeights {
  Eigen::VectorXd log_weights;  // unnormalized
  Eigen::VectorXd weights;      // probability vector
};

struct ScoreOptions {
  /// When set, components whose log-weight trails the maximum by more than
  /// `log_weight_cutoff` are dropped from the reduction. Off by default:
  /// exactness first, speed opt-in.
  bool truncate_components = false;
  double log_weight_cutoff = 45.0;
};

/// Weighting probabilities for the block-spherical fast path. The three
/// quadratic penalties (forward kernel u-block, v-block, and the observation
/// penalty through the reverse-kernel v-mean) are accumulated in log space
/// and normalized by log-sum-exp; k-independent constants are never formed.
ComponentWeights component_weights_spherical(const Eigen::VectorXd& z_t,
                                             const Eigen::VectorXd& y, double t,
                                             const SphericalGmmPrior& prior, double sigma_y2);

/// Exact conditional score for the block-spherical prior with H = [0 | I].
/// Valid for t in [0, 1).
Eigen::VectorXd exact_score_spherical(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                      double t, const SphericalGmmPrior& prior, double sigma_y2,
                                      const ScoreOptions& opts = {});

/// Per-component quantities of the reverse transition kernel and the
/// weighting auxiliaries, for one component of a dense prior. Exposed for
/// tests; the score assembly below recomputes them inline.
struct ReverseKernelParams {
  Eigen::VectorXd mu_0t;            // E[Z_0 | Z_t, xi=k]
  Eigen::MatrixXd cov_0t;           // Cov[Z_0 | Z_t, xi=k]
  Eigen::MatrixXd jacobian;         // d mu_0t / d z_t
  Eigen::VectorXd kalman_mean;      // E[Z_0 | Z_t, xi=k, Y=y]
  Eigen::MatrixXd weight_aux_cov;   // (H^T Sy^-1 H + cov_0t^-1)^-1
  Eigen::VectorXd weight_aux_mean;  // H^T Sy^-1 y + cov_0t^-1 mu_0t
  Eigen::MatrixXd chol;             // lower factor of cov_0t
};

ReverseKernelParams reverse_kernel_params(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                          double t, const DenseGmmPrior& prior,
                                          const ObservationModel& obs, Eigen::Index k);

/// Weighting probabilities for a dense prior and general H. All inverses are
/// realized as Cholesky solves; log terms carry the determinant factors and
/// the quadratic-form difference of the completed square.
ComponentWeights component_weights_general(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                           double t, const DenseGmmPrior& prior,
                                           const ObservationModel& obs);

/// Exact conditional score for a dense prior and general H; the oracle path
/// the spherical evaluator is cross-checked against. Valid for t in (0, 1):
/// the reverse kernel degenerates at t = 0.
Eigen::VectorXd exact_score_general(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                    double t, const DenseGmmPrior& prior,
                                    const ObservationModel& obs);

/// Batched spherical score evaluator for the reverse-ODE hot path. Holds the
/// prior blocks plus scratch; one instance per worker thread. Results are
/// identical to exact_score_spherical row by row.
class SphericalScoreBatch {
 public:
  SphericalScoreBatch(const SphericalGmmPrior& prior, double sigma_y2, ScoreOptions opts = {});

  /// states: B x d_x, ys: B x d_v (one observation per row). Writes the
  /// scores into `out` (resized to B x d_x).
  void evaluate(const Eigen::MatrixXd& states, const Eigen::MatrixXd& ys, double t,
                Eigen::MatrixXd& out);

  Eigen::Index dim_x() const { return d_u_ + d_v_; }
  Eigen::Index dim_v() const { return d_v_; }

 private:
  Eigen::MatrixXd means_u_, means_v_;  // K x d_u, K x d_v
  Eigen::VectorXd u_norm2_, v_norm2_;  // rowwise squared norms
  Eigen::VectorXd log_pi_;
  Eigen::Index d_u_, d_v_;
  double sigma_u2_, sigma_v2_, sigma_y2_;
  ScoreOptions opts_;
  // scratch, reused across calls
  Eigen::MatrixXd logw_, aux_, mean_u_, mean_v_;
  Eigen::VectorXd row_max_, row_sum_;
};

}  // namespace esd
