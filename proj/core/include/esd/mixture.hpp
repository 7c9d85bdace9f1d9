#pragma once

#include <Eigen/Core>
#include <vector>

#include "esd/prior.hpp"

namespace esd {

/// Weighted Gaussian mixture with dense covariances. This is the reference
/// representation: Bayesian posteriors under the linear-Gaussian observation
/// model stay in this family, and the forward diffusion maps it to itself,
/// so exact log-densities at any diffusion time are available for testing
/// and for the evaluation harness.
struct GaussianMixture {
  Eigen::VectorXd weights;                    // length M
  Eigen::MatrixXd means;                      // M x d
  std::vector<Eigen::MatrixXd> covariances;   // M matrices, d x d SPD

  Eigen::Index components() const { return means.rows(); }
  Eigen::Index dim() const { return means.cols(); }
  void validate() const;

  double log_density(const Eigen::VectorXd& x) const;

  /// Analytic score: sum_m r_m(x) Sigma_m^{-1} (mu_m - x) with
  /// responsibilities r_m.
  Eigen::VectorXd score(const Eigen::VectorXd& x) const;
};

/// Exact posterior of a Gaussian-mixture prior under Y = H X + eps: each
/// component receives the Kalman mean/covariance update and a new weight
/// proportional to pi_k * phi(y; H mu_k, H Sigma_k H^T + Sigma_Y).
GaussianMixture bayes_gmm_posterior(const DenseGmmPrior& prior, const ObservationModel& obs,
                                    const Eigen::VectorXd& y);

/// Pushes a mixture through the forward diffusion to time t: means scale by
/// alpha_t, covariances become beta_t^2 I + alpha_t^2 Sigma. Valid on [0, 1].
GaussianMixture propagate_mixture_to_time(const GaussianMixture& mix, double t);

GaussianMixture mixture_from_prior(const DenseGmmPrior& prior);

/// One-dimensional mixture of Gaussians; the workhorse for marginal and
/// projected reference densities.
struct Mixture1d {
  Eigen::VectorXd weights;
  Eigen::VectorXd means;
  Eigen::VectorXd variances;

  double density(double x) const;
  /// Support envelope [min(mu - k sigma), max(mu + k sigma)].
  std::pair<double, double> envelope(double n_sigmas = 6.0) const;
};

/// Marginal of coordinate `dim`.
Mixture1d marginal_1d(const GaussianMixture& mix, Eigen::Index dim);

/// Law of (x - origin) . unit_dir for x drawn from the mixture.
Mixture1d project_mixture(const GaussianMixture& mix, const Eigen::VectorXd& origin,
                          const Eigen::VectorXd& unit_dir);

}  // namespace esd
