#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <vector>

#include "esd/density.hpp"
#include "esd/mixture.hpp"
#include "esd/prior.hpp"

namespace esd {

/// Component responsibilities of the spherical prior after conditioning on
/// V = v exactly: softmax of log pi_k - ||v - v_k||^2 / (2 sigma_v2).
Eigen::VectorXd conditional_weights_given_v(const SphericalGmmPrior& prior,
                                            const Eigen::VectorXd& v);

/// Marginal density of u-coordinate `dim` under the exact GMM conditional
/// p(u | v): mixture of N(u_k, sigma_u2) with the weights above.
DensityGrid gmm_conditional_density(const SphericalGmmPrior& prior, const Eigen::VectorXd& v,
                                    const GridSpec& u_grid, Eigen::Index dim = 0);

/// Same marginal under the Bayesian relaxation Y = V + eps: weights become
/// proportional to pi_k phi(y; v_k, (sigma_v2 + sigma_y2) I); the u blocks
/// are untouched by the update because U and V are independent within a
/// component.
DensityGrid bgmm_posterior_density(const SphericalGmmPrior& prior, double sigma_y2,
                                   const Eigen::VectorXd& y, const GridSpec& u_grid,
                                   Eigen::Index dim = 0);

/// Analytic posterior of the bimodal benchmark: density proportional to
/// exp(-(v - u^2)^2 / (2 sigma_true2)) on u in [-2, 2], normalized by its
/// Riemann sum on the grid.
DensityGrid exact_bimodal_posterior(double v, double sigma_true2, const GridSpec& u_grid);

/// True conditional of the two-mode unit-covariance GMM: components
/// N(mu_i^u, I) with weights proportional to phi(y; mu_i^v, I).
GaussianMixture true_two_mode_conditional(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                                          Eigen::Index d_u, const Eigen::VectorXd& y);

/// Signed coordinates along the line joining two component means:
/// s_i = (x_i - (mu1 + mu2)/2) . (mu1 - mu2) / ||mu1 - mu2||.
Eigen::VectorXd project_onto_mode_line(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mu1,
                                       const Eigen::VectorXd& mu2);

struct PerDimensionKl {
  Eigen::VectorXd per_dim;
  double mean = 0.0;
};

/// KDE each sample dimension and measure kl_riemann against the analytic 1-D
/// marginal of the reference mixture (reference first).
PerDimensionKl per_dimension_kl(const Eigen::MatrixXd& samples, const GaussianMixture& reference,
                                int grid_points = 4096, double bandwidth = 0.0);

/// One ablation-row result with its settings echo.
struct KlReport {
  std::string case_id;
  Eigen::Index k = 0;
  double sigma_u2 = 0.0;
  double sigma_y2 = 0.0;
  double dtau = 0.0;
  double e_exact = 0.0;
  double e_gmm = 0.0;
  double e_bgmm = 0.0;
};

void save_kl_reports(const std::vector<KlReport>& rows, const std::filesystem::path& path);

}  // namespace esd
