#pragma once

#include <cmath>
#include <stdexcept>

namespace esd {

/// Linear noise schedule alpha_t = 1 - t, beta_t^2 = t. The drift and squared
/// diffusion coefficients follow from the schedule:
///   b(t) = d log(alpha_t)/dt = -1 / (1 - t)
///   sigma^2(t) = d(beta_t^2)/dt - 2 b(t) beta_t^2 = 1 + 2t / (1 - t)
/// Both diverge at t = 1, so that endpoint is outside the domain; reverse
/// integration starts at t = 1 - dt.
struct ScheduleValues {
  double alpha;
  double beta2;
  double drift_b;
  double diff_sigma2;
};

inline ScheduleValues schedule(double t) {
  if (!(t >= 0.0) || t >= 1.0)
    throw std::domain_error("schedule: t must lie in [0, 1)");
  const double one_minus_t = 1.0 - t;
  return {one_minus_t, t, -1.0 / one_minus_t, 1.0 + 2.0 * t / one_minus_t};
}

/// Block scalars of the reverse transition kernel under the block-spherical
/// prior covariance. Per block with variance s2 = sigma^2:
///   s1 = beta^2 / (alpha^2 s2 + beta^2)      (data pull)
///   s2 = alpha s2 / (alpha^2 s2 + beta^2)    (state pull, also the Jacobian)
///   s3 = s2 beta^2 / (alpha^2 s2 + beta^2)   (conditional variance)
/// satisfying s1 + alpha * s2 = 1 for every t in [0, 1].
struct SphericalScalars {
  double s1u, s2u, s3u;
  double s1v, s2v, s3v;
};

inline SphericalScalars spherical_scalars(double t, double sigma_u2, double sigma_v2) {
  if (!(t >= 0.0) || !(t <= 1.0))
    throw std::domain_error("spherical_scalars: t must lie in [0, 1]");
  if (!(sigma_u2 > 0.0) || !(sigma_v2 > 0.0))
    throw std::invalid_argument("spherical_scalars: variances must be positive");
  const double alpha = 1.0 - t;
  const double beta2 = t;
  const double den_u = alpha * alpha * sigma_u2 + beta2;
  const double den_v = alpha * alpha * sigma_v2 + beta2;
  return {beta2 / den_u,  alpha * sigma_u2 / den_u, sigma_u2 * beta2 / den_u,
          beta2 / den_v,  alpha * sigma_v2 / den_v, sigma_v2 * beta2 / den_v};
}

}  // namespace esd
