#include "esd/references.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace esd {

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& log_w) {
  const double m = log_w.maxCoeff();
  Eigen::VectorXd w = (log_w.array() - m).exp().matrix();
  w /= w.sum();
  return w;
}

DensityGrid weighted_u_marginal(const SphericalGmmPrior& prior, const Eigen::VectorXd& weights,
                                const GridSpec& u_grid, Eigen::Index dim) {
  if (dim < 0 || dim >= prior.d_u)
    throw std::invalid_argument("u marginal: dimension out of range");
  Mixture1d mix;
  mix.weights = weights;
  mix.means = prior.means_u().col(dim);
  mix.variances = Eigen::VectorXd::Constant(prior.size(), prior.sigma_u2);
  return density_on_grid(mix, u_grid);
}

}  // namespace

Eigen::VectorXd conditional_weights_given_v(const SphericalGmmPrior& prior,
                                            const Eigen::VectorXd& v) {
  prior.validate();
  if (v.size() != prior.d_v)
    throw std::invalid_argument("conditional_weights_given_v: v dimension mismatch");
  const Eigen::VectorXd sq =
      (prior.means_v().rowwise() - v.transpose()).rowwise().squaredNorm();
  const Eigen::VectorXd log_w =
      (prior.weights.array().log() - 0.5 * sq.array() / prior.sigma_v2).matrix();
  return softmax(log_w);
}

DensityGrid gmm_conditional_density(const SphericalGmmPrior& prior, const Eigen::VectorXd& v,
                                    const GridSpec& u_grid, Eigen::Index dim) {
  return weighted_u_marginal(prior, conditional_weights_given_v(prior, v), u_grid, dim);
}

DensityGrid bgmm_posterior_density(const SphericalGmmPrior& prior, double sigma_y2,
                                   const Eigen::VectorXd& y, const GridSpec& u_grid,
                                   Eigen::Index dim) {
  prior.validate();
  if (!(sigma_y2 >= 0.0))
    throw std::invalid_argument("bgmm_posterior_density: sigma_y2 must be >= 0");
  if (y.size() != prior.d_v)
    throw std::invalid_argument("bgmm_posterior_density: y dimension mismatch");
  const double var = prior.sigma_v2 + sigma_y2;
  const Eigen::VectorXd sq =
      (prior.means_v().rowwise() - y.transpose()).rowwise().squaredNorm();
  const Eigen::VectorXd log_w =
      (prior.weights.array().log() - 0.5 * sq.array() / var).matrix();
  return weighted_u_marginal(prior, softmax(log_w), u_grid, dim);
}

DensityGrid exact_bimodal_posterior(double v, double sigma_true2, const GridSpec& u_grid) {
  u_grid.validate();
  if (!(sigma_true2 > 0.0))
    throw std::invalid_argument("exact_bimodal_posterior: sigma_true2 must be positive");
  DensityGrid out;
  out.lo = u_grid.lo;
  out.hi = u_grid.hi;
  out.values.resize(u_grid.n_points);
  const double dx = u_grid.spacing();
  for (int i = 0; i < u_grid.n_points; ++i) {
    const double u = u_grid.lo + i * dx;
    if (u < -2.0 || u > 2.0) {
      out.values[i] = 0.0;
      continue;
    }
    const double r = v - u * u;
    out.values[i] = std::exp(-0.5 * r * r / sigma_true2);
  }
  const double mass = out.integral();
  if (!(mass > 0.0))
    throw std::runtime_error("exact_bimodal_posterior: grid misses the support");
  out.values /= mass;
  return out;
}

GaussianMixture true_two_mode_conditional(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                                          Eigen::Index d_u, const Eigen::VectorXd& y) {
  if (mu1.size() != mu2.size())
    throw std::invalid_argument("true_two_mode_conditional: mean length mismatch");
  const Eigen::Index d_v = mu1.size() - d_u;
  if (d_u < 1 || d_v < 1)
    throw std::invalid_argument("true_two_mode_conditional: bad split");
  if (y.size() != d_v)
    throw std::invalid_argument("true_two_mode_conditional: y dimension mismatch");

  // Unit covariances: the u block is independent of the observed block, so
  // conditioning only reweights the two components.
  Eigen::VectorXd log_w(2);
  log_w[0] = -0.5 * (y - mu1.tail(d_v)).squaredNorm();
  log_w[1] = -0.5 * (y - mu2.tail(d_v)).squaredNorm();

  GaussianMixture mix;
  mix.weights = softmax(log_w);
  mix.means.resize(2, d_u);
  mix.means.row(0) = mu1.head(d_u).transpose();
  mix.means.row(1) = mu2.head(d_u).transpose();
  mix.covariances.assign(2, Eigen::MatrixXd::Identity(d_u, d_u));
  return mix;
}

Eigen::VectorXd project_onto_mode_line(const Eigen::MatrixXd& samples, const Eigen::VectorXd& mu1,
                                       const Eigen::VectorXd& mu2) {
  if (mu1.size() != mu2.size() || samples.cols() != mu1.size())
    throw std::invalid_argument("project_onto_mode_line: dimension mismatch");
  const Eigen::VectorXd axis = mu1 - mu2;
  const double norm = axis.norm();
  if (!(norm > 0.0))
    throw std::invalid_argument("project_onto_mode_line: mu1 == mu2 gives no axis");
  const Eigen::VectorXd dir = axis / norm;
  const Eigen::VectorXd mid = 0.5 * (mu1 + mu2);
  return (samples.rowwise() - mid.transpose()) * dir;
}

PerDimensionKl per_dimension_kl(const Eigen::MatrixXd& samples, const GaussianMixture& reference,
                                int grid_points, double bandwidth) {
  reference.validate();
  if (samples.cols() != reference.dim())
    throw std::invalid_argument("per_dimension_kl: dimension mismatch");
  if (samples.rows() < 2)
    throw std::invalid_argument("per_dimension_kl: need >= 2 samples");

  PerDimensionKl out;
  out.per_dim.resize(samples.cols());
  for (Eigen::Index d = 0; d < samples.cols(); ++d) {
    const Mixture1d marg = marginal_1d(reference, d);
    const GridSpec grid = make_kl_grid(marg.envelope(), samples.col(d), grid_points);
    const DensityGrid ref = density_on_grid(marg, grid);
    const DensityGrid kde = kde_density(samples.col(d), grid, bandwidth);
    out.per_dim[d] = kl_riemann(ref, kde);
  }
  out.mean = out.per_dim.mean();
  return out;
}

void save_kl_reports(const std::vector<KlReport>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "case,K,sigma_u2,sigma_y2,dtau,e_exact,e_gmm,e_bgmm\n";
  out.precision(10);
  for (const auto& r : rows)
    out << r.case_id << ',' << r.k << ',' << r.sigma_u2 << ',' << r.sigma_y2 << ',' << r.dtau
        << ',' << r.e_exact << ',' << r.e_gmm << ',' << r.e_bgmm << '\n';
}

}  // namespace esd
