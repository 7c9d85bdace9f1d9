#include "esd/prior.hpp"

#include <Eigen/Cholesky>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "esd/parallel.hpp"

namespace esd {

void SphericalGmmPrior::validate() const {
  if (means.rows() < 1) throw std::invalid_argument("SphericalGmmPrior: K must be >= 1");
  if (means.cols() != d_u + d_v)
    throw std::invalid_argument("SphericalGmmPrior: means width != d_u + d_v");
  if (!(sigma_u2 > 0.0) || !(sigma_v2 > 0.0))
    throw std::invalid_argument("SphericalGmmPrior: variances must be positive");
  if (weights.size() != means.rows())
    throw std::invalid_argument("SphericalGmmPrior: weight count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("SphericalGmmPrior: weights must sum to 1");
  if ((weights.array() <= 0.0).any())
    throw std::invalid_argument("SphericalGmmPrior: weights must be in (0, 1]");
}

void DenseGmmPrior::validate() const {
  if (means.rows() < 1) throw std::invalid_argument("DenseGmmPrior: K must be >= 1");
  if (covariances.size() != static_cast<std::size_t>(means.rows()))
    throw std::invalid_argument("DenseGmmPrior: covariance count mismatch");
  if (weights.size() != means.rows())
    throw std::invalid_argument("DenseGmmPrior: weight count mismatch");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw std::invalid_argument("DenseGmmPrior: weights must sum to 1");
  for (const auto& cov : covariances) {
    if (cov.rows() != dim() || cov.cols() != dim())
      throw std::invalid_argument("DenseGmmPrior: covariance shape mismatch");
    if (Eigen::LLT<Eigen::MatrixXd>(cov).info() != Eigen::Success)
      throw std::invalid_argument("DenseGmmPrior: covariance not positive definite");
  }
}

ObservationModel conditional_observation(Eigen::Index d_u, Eigen::Index d_v, double sigma_y2) {
  if (!(sigma_y2 > 0.0))
    throw std::invalid_argument("conditional_observation: sigma_y2 must be positive");
  ObservationModel obs;
  obs.h = Eigen::MatrixXd::Zero(d_v, d_u + d_v);
  obs.h.rightCols(d_v) = Eigen::MatrixXd::Identity(d_v, d_v);
  obs.sigma_y = sigma_y2 * Eigen::MatrixXd::Identity(d_v, d_v);
  return obs;
}

double nearest_neighbor_bandwidth(const JointDataset& data, int threads) {
  data.validate();
  const Eigen::Index k = data.size();
  if (k < 2)
    throw std::invalid_argument("nearest_neighbor_bandwidth: need K >= 2 samples");

  const Eigen::MatrixXd x = data.joint();
  const Eigen::VectorXd sq_norms = x.rowwise().squaredNorm();
  Eigen::VectorXd nearest(k);

  parallel_for(k, resolve_threads(threads), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t i = begin; i < end; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < k; ++j) {
        if (j == i) continue;
        // Expanded form keeps this a cheap dot product; clamp guards the
        // x==x' cancellation from going negative.
        const double d2 =
            std::max(0.0, sq_norms[i] + sq_norms[j] - 2.0 * x.row(i).dot(x.row(j)));
        if (d2 < best) best = d2;
      }
      nearest[i] = best;
    }
  });

  return nearest.mean() / static_cast<double>(data.dim_x());
}

SphericalGmmPrior build_spherical_prior(const JointDataset& data, double sigma_u2,
                                        double sigma_v2) {
  data.validate();
  if (!(sigma_u2 > 0.0) || !(sigma_v2 > 0.0))
    throw std::invalid_argument("build_spherical_prior: variances must be positive");
  SphericalGmmPrior prior;
  prior.means = data.joint();
  prior.d_u = data.dim_u();
  prior.d_v = data.dim_v();
  prior.sigma_u2 = sigma_u2;
  prior.sigma_v2 = sigma_v2;
  prior.weights =
      Eigen::VectorXd::Constant(data.size(), 1.0 / static_cast<double>(data.size()));
  return prior;
}

DenseGmmPrior to_dense_prior(const SphericalGmmPrior& prior) {
  prior.validate();
  DenseGmmPrior dense;
  dense.means = prior.means;
  dense.weights = prior.weights;
  Eigen::VectorXd diag(prior.dim_x());
  diag.head(prior.d_u).setConstant(prior.sigma_u2);
  diag.tail(prior.d_v).setConstant(prior.sigma_v2);
  dense.covariances.assign(static_cast<std::size_t>(prior.size()), diag.asDiagonal());
  return dense;
}

}  // namespace esd
