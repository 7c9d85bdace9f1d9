#include "esd/mixture.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace esd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

double log_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                    const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const Eigen::Index d = x.size();
  const Eigen::VectorXd diff = x - mean;
  const Eigen::VectorXd sol = llt.solve(diff);
  const double log_det =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (d * kLog2Pi + log_det + diff.dot(sol));
}

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

void GaussianMixture::validate() const {
  if (components() < 1) throw std::invalid_argument("GaussianMixture: empty");
  if (weights.size() != components())
    throw std::invalid_argument("GaussianMixture: weight count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("GaussianMixture: weights must sum to 1");
  if (covariances.size() != static_cast<std::size_t>(components()))
    throw std::invalid_argument("GaussianMixture: covariance count mismatch");
  for (const auto& cov : covariances)
    if (cov.rows() != dim() || cov.cols() != dim())
      throw std::invalid_argument("GaussianMixture: covariance shape mismatch");
}

double GaussianMixture::log_density(const Eigen::VectorXd& x) const {
  Eigen::VectorXd terms(components());
  for (Eigen::Index m = 0; m < components(); ++m) {
    const Eigen::LLT<Eigen::MatrixXd> llt(covariances[static_cast<std::size_t>(m)]);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("GaussianMixture: covariance " + std::to_string(m) +
                               " is not positive definite");
    terms[m] = std::log(weights[m]) + log_gaussian(x, means.row(m).transpose(), llt);
  }
  return log_sum_exp(terms);
}

Eigen::VectorXd GaussianMixture::score(const Eigen::VectorXd& x) const {
  Eigen::VectorXd log_terms(components());
  Eigen::MatrixXd pulls(components(), dim());
  for (Eigen::Index m = 0; m < components(); ++m) {
    const Eigen::LLT<Eigen::MatrixXd> llt(covariances[static_cast<std::size_t>(m)]);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("GaussianMixture: covariance " + std::to_string(m) +
                               " is not positive definite");
    const Eigen::VectorXd mean = means.row(m).transpose();
    log_terms[m] = std::log(weights[m]) + log_gaussian(x, mean, llt);
    pulls.row(m) = llt.solve(mean - x).transpose();
  }
  const double lse = log_sum_exp(log_terms);
  const Eigen::VectorXd resp = (log_terms.array() - lse).exp();
  return pulls.transpose() * resp;
}

GaussianMixture bayes_gmm_posterior(const DenseGmmPrior& prior, const ObservationModel& obs,
                                    const Eigen::VectorXd& y) {
  if (obs.dim_x() != prior.dim())
    throw std::invalid_argument("bayes_gmm_posterior: H width != prior dimension");
  if (y.size() != obs.dim_y())
    throw std::invalid_argument("bayes_gmm_posterior: y dimension mismatch");

  const Eigen::Index k_count = prior.size();
  GaussianMixture post;
  post.means.resize(k_count, prior.dim());
  post.covariances.resize(static_cast<std::size_t>(k_count));
  Eigen::VectorXd log_w(k_count);

  for (Eigen::Index k = 0; k < k_count; ++k) {
    const Eigen::MatrixXd& cov = prior.covariances[static_cast<std::size_t>(k)];
    const Eigen::VectorXd mean = prior.means.row(k).transpose();
    const Eigen::MatrixXd cross = cov * obs.h.transpose();          // Sigma H^T
    const Eigen::MatrixXd innov = obs.h * cross + obs.sigma_y;      // H Sigma H^T + Sigma_Y
    const Eigen::LLT<Eigen::MatrixXd> llt(innov);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("bayes_gmm_posterior: singular innovation covariance at component " +
                               std::to_string(k));
    const Eigen::VectorXd resid = y - obs.h * mean;
    post.means.row(k) = (mean + cross * llt.solve(resid)).transpose();
    Eigen::MatrixXd upd = cov - cross * llt.solve(cross.transpose());
    post.covariances[static_cast<std::size_t>(k)] = 0.5 * (upd + upd.transpose());
    log_w[k] = std::log(prior.weights[k]) + log_gaussian(y, obs.h * mean, llt);
  }

  const double lse = log_sum_exp(log_w);
  post.weights = (log_w.array() - lse).exp();
  post.weights /= post.weights.sum();
  return post;
}

GaussianMixture propagate_mixture_to_time(const GaussianMixture& mix, double t) {
  if (!(t >= 0.0) || !(t <= 1.0))
    throw std::domain_error("propagate_mixture_to_time: t must lie in [0, 1]");
  const double alpha = 1.0 - t;
  const double beta2 = t;
  GaussianMixture out;
  out.weights = mix.weights;
  out.means = alpha * mix.means;
  out.covariances.reserve(mix.covariances.size());
  const Eigen::MatrixXd noise = beta2 * Eigen::MatrixXd::Identity(mix.dim(), mix.dim());
  for (const auto& cov : mix.covariances) out.covariances.push_back(noise + alpha * alpha * cov);
  return out;
}

GaussianMixture mixture_from_prior(const DenseGmmPrior& prior) {
  GaussianMixture mix;
  mix.weights = prior.weights;
  mix.means = prior.means;
  mix.covariances = prior.covariances;
  return mix;
}

double Mixture1d::density(double x) const {
  double acc = 0.0;
  for (Eigen::Index m = 0; m < weights.size(); ++m) {
    const double var = variances[m];
    const double diff = x - means[m];
    acc += weights[m] * std::exp(-0.5 * diff * diff / var) /
           std::sqrt(2.0 * std::numbers::pi * var);
  }
  return acc;
}

std::pair<double, double> Mixture1d::envelope(double n_sigmas) const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (Eigen::Index m = 0; m < weights.size(); ++m) {
    const double s = std::sqrt(variances[m]);
    lo = std::min(lo, means[m] - n_sigmas * s);
    hi = std::max(hi, means[m] + n_sigmas * s);
  }
  return {lo, hi};
}

Mixture1d marginal_1d(const GaussianMixture& mix, Eigen::Index dim) {
  if (dim < 0 || dim >= mix.dim())
    throw std::invalid_argument("marginal_1d: dimension out of range");
  Mixture1d out;
  out.weights = mix.weights;
  out.means = mix.means.col(dim);
  out.variances.resize(mix.components());
  for (Eigen::Index m = 0; m < mix.components(); ++m)
    out.variances[m] = mix.covariances[static_cast<std::size_t>(m)](dim, dim);
  return out;
}

Mixture1d project_mixture(const GaussianMixture& mix, const Eigen::VectorXd& origin,
                          const Eigen::VectorXd& unit_dir) {
  if (origin.size() != mix.dim() || unit_dir.size() != mix.dim())
    throw std::invalid_argument("project_mixture: dimension mismatch");
  Mixture1d out;
  out.weights = mix.weights;
  out.means.resize(mix.components());
  out.variances.resize(mix.components());
  for (Eigen::Index m = 0; m < mix.components(); ++m) {
    out.means[m] = (mix.means.row(m).transpose() - origin).dot(unit_dir);
    out.variances[m] =
        unit_dir.dot(mix.covariances[static_cast<std::size_t>(m)] * unit_dir);
  }
  return out;
}

}  // namespace esd
