#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "esd/mixture.hpp"
#include "esd/prior.hpp"
#include "esd/rng.hpp"
#include "esd/schedule.hpp"
#include "esd/score.hpp"

using namespace esd;

namespace {

double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-12);
}

// Independent oracle for the conditional score: the Bayesian posterior is a
// mixture in closed form, the forward diffusion maps mixtures to mixtures,
// and the log-density of the result can be differenced numerically.
double log_p_zt_given_y(const Eigen::VectorXd& z, const Eigen::VectorXd& y, double t,
                        const DenseGmmPrior& prior, const ObservationModel& obs) {
  const GaussianMixture post = bayes_gmm_posterior(prior, obs, y);
  return propagate_mixture_to_time(post, t).log_density(z);
}

Eigen::VectorXd fd_conditional_score(const Eigen::VectorXd& z, const Eigen::VectorXd& y, double t,
                                     const DenseGmmPrior& prior, const ObservationModel& obs,
                                     double h = 1e-5) {
  Eigen::VectorXd grad(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    Eigen::VectorXd zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    grad[i] = (log_p_zt_given_y(zp, y, t, prior, obs) - log_p_zt_given_y(zm, y, t, prior, obs)) /
              (2.0 * h);
  }
  return grad;
}

SphericalGmmPrior random_spherical_prior(CounterRng& rng, Eigen::Index k, Eigen::Index d_u,
                                         Eigen::Index d_v) {
  JointDataset data;
  data.u = rng.gaussian_matrix(k, d_u);
  data.v = rng.gaussian_matrix(k, d_v);
  const double sigma_u2 = 0.01 + 0.99 * rng.next_double();
  const double sigma_v2 = 0.01 + 0.99 * rng.next_double();
  return build_spherical_prior(data, sigma_u2, sigma_v2);
}

DenseGmmPrior random_dense_prior(CounterRng& rng, Eigen::Index k, Eigen::Index d) {
  DenseGmmPrior prior;
  prior.means = rng.gaussian_matrix(k, d);
  Eigen::VectorXd w(k);
  for (Eigen::Index i = 0; i < k; ++i) w[i] = 0.2 + rng.next_double();
  prior.weights = w / w.sum();
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::MatrixXd b = 0.4 * rng.gaussian_matrix(d, d);
    prior.covariances.push_back(b * b.transpose() +
                                (0.05 + 0.5 * rng.next_double()) *
                                    Eigen::MatrixXd::Identity(d, d));
  }
  return prior;
}

}  // namespace

TEST_CASE("schedule endpoints and hand values") {
  const ScheduleValues s0 = schedule(0.0);
  CHECK(s0.alpha == 1.0);
  CHECK(s0.beta2 == 0.0);
  CHECK(s0.drift_b == -1.0);
  CHECK(s0.diff_sigma2 == 1.0);

  const ScheduleValues s5 = schedule(0.5);
  CHECK(s5.alpha == doctest::Approx(0.5));
  CHECK(s5.beta2 == doctest::Approx(0.5));
  CHECK(s5.drift_b == doctest::Approx(-2.0));
  CHECK(s5.diff_sigma2 == doctest::Approx(3.0));

  const ScheduleValues s9 = schedule(0.9);
  CHECK(s9.alpha == doctest::Approx(0.1));
  CHECK(s9.beta2 == doctest::Approx(0.9));
  CHECK(s9.drift_b == doctest::Approx(-10.0));
  CHECK(s9.diff_sigma2 == doctest::Approx(19.0));

  CHECK_THROWS_AS(schedule(1.0), std::domain_error);
  CHECK_THROWS_AS(schedule(-0.1), std::domain_error);
}

TEST_CASE("spherical scalars endpoints, hand value, and block identity") {
  const SphericalScalars a = spherical_scalars(0.0, 0.3, 0.7);
  CHECK(a.s1u == 0.0);
  CHECK(a.s2u == doctest::Approx(1.0));
  CHECK(a.s3u == 0.0);
  CHECK(a.s1v == 0.0);
  CHECK(a.s2v == doctest::Approx(1.0));
  CHECK(a.s3v == 0.0);

  const SphericalScalars b = spherical_scalars(1.0, 0.3, 0.7);
  CHECK(b.s1u == doctest::Approx(1.0));
  CHECK(b.s2u == 0.0);
  CHECK(b.s3u == doctest::Approx(0.3));
  CHECK(b.s3v == doctest::Approx(0.7));

  const SphericalScalars c = spherical_scalars(0.5, 0.1, 0.1);
  CHECK(c.s1u == doctest::Approx(0.5 / 0.525).epsilon(1e-5));
  CHECK(c.s2u == doctest::Approx(0.05 / 0.525).epsilon(1e-5));
  CHECK(c.s3u == doctest::Approx(0.05 / 0.525).epsilon(1e-5));

  CounterRng rng(7, 0);
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.next_double();
    const double su = 0.01 + rng.next_double();
    const double sv = 0.01 + rng.next_double();
    const SphericalScalars s = spherical_scalars(t, su, sv);
    const double alpha = 1.0 - t;
    CHECK(s.s1u + alpha * s.s2u == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.s1v + alpha * s.s2v == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.s3u >= 0.0);
    CHECK(s.s3u <= su + 1e-15);
    CHECK(s.s3v <= sv + 1e-15);
  }
}

TEST_CASE("mixture log-density and score basics") {
  GaussianMixture std_normal;
  std_normal.weights = Eigen::VectorXd::Ones(1);
  std_normal.means = Eigen::MatrixXd::Zero(1, 3);
  std_normal.covariances = {Eigen::MatrixXd::Identity(3, 3)};
  CounterRng rng(11, 0);
  const Eigen::VectorXd x = rng.gaussian_vector(3);
  CHECK(rel_err(std_normal.score(x), -x) < 1e-12);

  GaussianMixture sym;
  sym.weights = Eigen::VectorXd::Constant(2, 0.5);
  sym.means.resize(2, 2);
  sym.means << 1.0, 0.0, -1.0, 0.0;
  sym.covariances = {Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
  CHECK(sym.score(Eigen::VectorXd::Zero(2)).norm() < 1e-14);
}

TEST_CASE("mixture density matches direct summation and finite differences") {
  CounterRng rng(12, 0);
  GaussianMixture mix;
  mix.weights = Eigen::VectorXd::Constant(3, 1.0 / 3.0);
  mix.means = rng.gaussian_matrix(3, 2);
  for (int m = 0; m < 3; ++m) {
    const Eigen::MatrixXd b = 0.5 * rng.gaussian_matrix(2, 2);
    mix.covariances.push_back(b * b.transpose() + 0.3 * Eigen::MatrixXd::Identity(2, 2));
  }

  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::VectorXd x = rng.gaussian_vector(2);
    double direct = 0.0;
    for (int m = 0; m < 3; ++m) {
      const Eigen::MatrixXd& cov = mix.covariances[m];
      const Eigen::VectorXd diff = x - mix.means.row(m).transpose();
      const double quad = diff.dot(cov.inverse() * diff);
      direct += mix.weights[m] * std::exp(-0.5 * quad) /
                (2.0 * M_PI * std::sqrt(cov.determinant()));
    }
    CHECK(std::exp(mix.log_density(x)) == doctest::Approx(direct).epsilon(1e-12));

    const double h = 1e-6;
    Eigen::VectorXd fd(2);
    for (int i = 0; i < 2; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (mix.log_density(xp) - mix.log_density(xm)) / (2.0 * h);
    }
    CHECK(rel_err(mix.score(x), fd) < 1e-6);
  }
}

TEST_CASE("forward propagation of a mixture") {
  CounterRng rng(13, 0);
  GaussianMixture mix;
  mix.weights = Eigen::VectorXd::Constant(2, 0.5);
  mix.means = rng.gaussian_matrix(2, 2);
  mix.covariances = {Eigen::MatrixXd::Identity(2, 2), 2.0 * Eigen::MatrixXd::Identity(2, 2)};

  const GaussianMixture at0 = propagate_mixture_to_time(mix, 0.0);
  CHECK((at0.means - mix.means).norm() < 1e-15);
  CHECK((at0.covariances[1] - mix.covariances[1]).norm() < 1e-15);

  const GaussianMixture at1 = propagate_mixture_to_time(mix, 1.0);
  CHECK(at1.means.norm() < 1e-15);
  CHECK((at1.covariances[0] - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-15);
  CHECK((at1.covariances[1] - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-15);

  const GaussianMixture at5 = propagate_mixture_to_time(mix, 0.5);
  CHECK((at5.means - 0.5 * mix.means).norm() < 1e-15);
  CHECK((at5.covariances[0] - 0.75 * Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("Bayesian GMM posterior: scalar Kalman update by hand") {
  DenseGmmPrior prior;
  prior.means = Eigen::MatrixXd::Zero(1, 2);
  prior.covariances = {Eigen::MatrixXd::Identity(2, 2)};
  prior.weights = Eigen::VectorXd::Ones(1);
  const ObservationModel obs = conditional_observation(1, 1, 1.0);
  Eigen::VectorXd y(1);
  y[0] = 1.0;

  const GaussianMixture post = bayes_gmm_posterior(prior, obs, y);
  CHECK(post.means(0, 1) == doctest::Approx(0.5));
  CHECK(post.covariances[0](1, 1) == doctest::Approx(0.5));
  CHECK(post.means(0, 0) == doctest::Approx(0.0));
  CHECK(post.covariances[0](0, 0) == doctest::Approx(1.0));
  CHECK(post.covariances[0](0, 1) == doctest::Approx(0.0));
}

TEST_CASE("Bayesian GMM posterior: symmetric weights and small-noise limit") {
  DenseGmmPrior prior;
  prior.means.resize(2, 2);
  prior.means << 0.0, 1.0, 0.0, -1.0;
  prior.covariances = {0.5 * Eigen::MatrixXd::Identity(2, 2),
                       0.5 * Eigen::MatrixXd::Identity(2, 2)};
  prior.weights = Eigen::VectorXd::Constant(2, 0.5);

  Eigen::VectorXd y0(1);
  y0[0] = 0.0;  // equidistant from both component projections
  const GaussianMixture post = bayes_gmm_posterior(prior, conditional_observation(1, 1, 0.3), y0);
  CHECK(post.weights[0] == doctest::Approx(0.5).epsilon(1e-12));

  Eigen::VectorXd y1(1);
  y1[0] = 0.4;
  const GaussianMixture tight =
      bayes_gmm_posterior(prior, conditional_observation(1, 1, 1e-8), y1);
  CHECK(std::abs(tight.means(0, 1) - 0.4) < 1e-4);
  CHECK(std::abs(tight.means(1, 1) - 0.4) < 1e-4);
}

TEST_CASE("component weights: normalization, symmetry, shift invariance") {
  CounterRng rng(21, 0);
  const SphericalGmmPrior single = random_spherical_prior(rng, 1, 1, 1);
  Eigen::VectorXd y(1);
  y[0] = 0.3;
  const ComponentWeights w1 =
      component_weights_spherical(Eigen::VectorXd::Zero(2), y, 0.4, single, 1e-3);
  CHECK(w1.weights[0] == doctest::Approx(1.0));

  // two components mirrored around the state and the observation
  JointDataset data;
  data.u.resize(2, 1);
  data.v.resize(2, 1);
  data.u << 1.0, -1.0;
  data.v << 0.5, -0.5;
  const SphericalGmmPrior sym = build_spherical_prior(data, 0.2, 0.3);
  const ComponentWeights w2 =
      component_weights_spherical(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1), 0.3, sym,
                                  1e-2);
  CHECK(w2.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(w2.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));

  // softmax is invariant to a constant shift of the log-weights
  const Eigen::VectorXd shifted = (w2.log_weights.array() + 123.456).matrix();
  Eigen::VectorXd re = (shifted.array() - shifted.maxCoeff()).exp().matrix();
  re /= re.sum();
  CHECK((re - w2.weights).norm() < 1e-14);
}

TEST_CASE("spherical weights equal the dense-path weights") {
  CounterRng rng(22, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const SphericalGmmPrior prior = random_spherical_prior(rng, 3, 1, 1);
    const DenseGmmPrior dense = to_dense_prior(prior);
    const double sigma_y2 = 0.001 + rng.next_double();
    const ObservationModel obs = conditional_observation(1, 1, sigma_y2);
    const Eigen::VectorXd z = rng.gaussian_vector(2);
    const Eigen::VectorXd y = rng.gaussian_vector(1);
    const double t = 0.05 + 0.9 * rng.next_double();

    const ComponentWeights fast = component_weights_spherical(z, y, t, prior, sigma_y2);
    const ComponentWeights oracle = component_weights_general(z, y, t, dense, obs);
    CHECK((fast.weights - oracle.weights).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("spherical score: symmetry zero") {
  JointDataset data;
  data.u = Eigen::MatrixXd::Zero(1, 1);
  data.v = Eigen::MatrixXd::Zero(1, 1);
  const SphericalGmmPrior prior = build_spherical_prior(data, 1.0, 1.0);
  for (const double t : {0.0, 0.2, 0.7, 0.95}) {
    const Eigen::VectorXd s =
        exact_score_spherical(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1), t, prior, 1.0);
    CHECK(s.norm() < 1e-14);
  }
}

TEST_CASE("spherical score: single-component Gaussian conjugacy oracle") {
  // d_u = d_v = 1; the posterior mean/covariance follow from the scalar
  // Kalman update, the time-t marginal from the forward kernel, and the
  // score of a Gaussian is available in closed form.
  const double mu_u = 0.4, mu_v = -0.7;
  const double su2 = 0.3, sv2 = 0.6, sy2 = 0.2;
  JointDataset data;
  data.u = Eigen::MatrixXd::Constant(1, 1, mu_u);
  data.v = Eigen::MatrixXd::Constant(1, 1, mu_v);
  const SphericalGmmPrior prior = build_spherical_prior(data, su2, sv2);

  const double y = 0.1;
  const double post_v_mean = mu_v + sv2 / (sv2 + sy2) * (y - mu_v);
  const double post_v_var = sv2 - sv2 * sv2 / (sv2 + sy2);

  CounterRng rng(23, 0);
  for (const double t : {0.01, 0.3, 0.7, 0.99}) {
    const double alpha = 1.0 - t;
    const double beta2 = t;
    const Eigen::VectorXd z = rng.gaussian_vector(2);
    Eigen::VectorXd expected(2);
    expected[0] = -(z[0] - alpha * mu_u) / (beta2 + alpha * alpha * su2);
    expected[1] = -(z[1] - alpha * post_v_mean) / (beta2 + alpha * alpha * post_v_var);

    Eigen::VectorXd yv(1);
    yv[0] = y;
    const Eigen::VectorXd got = exact_score_spherical(z, yv, t, prior, sy2);
    CHECK(rel_err(got, expected) < 1e-10);
  }
}

TEST_CASE("spherical score matches finite differences of the posterior log-density") {
  CounterRng rng(24, 0);
  const SphericalGmmPrior prior = random_spherical_prior(rng, 50, 2, 1);
  const DenseGmmPrior dense = to_dense_prior(prior);
  const double sigma_y2 = 0.05;
  const ObservationModel obs = conditional_observation(2, 1, sigma_y2);
  const Eigen::VectorXd y = rng.gaussian_vector(1);

  for (const double t : {0.01, 0.3, 0.7, 0.99}) {
    const Eigen::VectorXd z = rng.gaussian_vector(3);
    const Eigen::VectorXd got = exact_score_spherical(z, y, t, prior, sigma_y2);
    const Eigen::VectorXd fd = fd_conditional_score(z, y, t, dense, obs);
    CHECK(rel_err(got, fd) < 1e-5);
  }
}

TEST_CASE("dense score equals the spherical fast path on block-spherical input") {
  CounterRng rng(25, 0);
  int checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index d_u = 1 + static_cast<Eigen::Index>(rng.next_below(3));
    const Eigen::Index d_v = 1 + static_cast<Eigen::Index>(rng.next_below(2));
    const Eigen::Index k = 2 + static_cast<Eigen::Index>(rng.next_below(20));
    const SphericalGmmPrior prior = random_spherical_prior(rng, k, d_u, d_v);
    const DenseGmmPrior dense = to_dense_prior(prior);
    const double sigma_y2 = 0.001 + 0.3 * rng.next_double();
    const ObservationModel obs = conditional_observation(d_u, d_v, sigma_y2);
    const Eigen::VectorXd y = rng.gaussian_vector(d_v);
    for (const double t : {0.01, 0.3, 0.7, 0.99}) {
      const Eigen::VectorXd z = rng.gaussian_vector(d_u + d_v);
      const Eigen::VectorXd fast = exact_score_spherical(z, y, t, prior, sigma_y2);
      const Eigen::VectorXd oracle = exact_score_general(z, y, t, dense, obs);
      CHECK(rel_err(fast, oracle) < 1e-9);
      ++checked;
    }
  }
  CHECK(checked == 100);
}

TEST_CASE("dense score: vanishing-likelihood limit reduces to the prior score") {
  CounterRng rng(26, 0);
  const DenseGmmPrior prior = random_dense_prior(rng, 1, 3);
  ObservationModel obs;
  obs.h = rng.gaussian_matrix(2, 3);
  obs.sigma_y = 1e6 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd y = rng.gaussian_vector(2);
  const double t = 0.4;
  const Eigen::VectorXd z = rng.gaussian_vector(3);

  const Eigen::VectorXd got = exact_score_general(z, y, t, prior, obs);
  // prior-only score: propagate the prior component and differentiate
  const double alpha = 1.0 - t;
  const Eigen::MatrixXd cov =
      t * Eigen::MatrixXd::Identity(3, 3) + alpha * alpha * prior.covariances[0];
  const Eigen::VectorXd expected =
      cov.llt().solve(alpha * prior.means.row(0).transpose() - z);
  CHECK(rel_err(got, expected) < 1e-4);
}

TEST_CASE("dense score matches finite differences on a full-covariance instance") {
  CounterRng rng(27, 0);
  const DenseGmmPrior prior = random_dense_prior(rng, 2, 3);
  ObservationModel obs;
  obs.h = rng.gaussian_matrix(2, 3);
  const Eigen::MatrixXd b = 0.3 * rng.gaussian_matrix(2, 2);
  obs.sigma_y = b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd y = rng.gaussian_vector(2);

  for (const double t : {0.01, 0.3, 0.7, 0.99}) {
    const Eigen::VectorXd z = rng.gaussian_vector(3);
    const Eigen::VectorXd got = exact_score_general(z, y, t, prior, obs);
    const Eigen::VectorXd fd = fd_conditional_score(z, y, t, prior, obs);
    CHECK(rel_err(got, fd) < 1e-5);
  }
}

TEST_CASE("reverse kernel parameters reduce to the block scalars") {
  CounterRng rng(28, 0);
  const SphericalGmmPrior prior = random_spherical_prior(rng, 4, 2, 1);
  const DenseGmmPrior dense = to_dense_prior(prior);
  const double sigma_y2 = 0.01;
  const ObservationModel obs = conditional_observation(2, 1, sigma_y2);
  const double t = 0.37;
  const Eigen::VectorXd z = rng.gaussian_vector(3);
  const Eigen::VectorXd y = rng.gaussian_vector(1);
  const SphericalScalars s = spherical_scalars(t, prior.sigma_u2, prior.sigma_v2);

  const ReverseKernelParams p = reverse_kernel_params(z, y, t, dense, obs, 1);
  Eigen::VectorXd mu_expected(3);
  mu_expected.head(2) = s.s1u * dense.means.row(1).head(2).transpose() + s.s2u * z.head(2);
  mu_expected.tail(1) = s.s1v * dense.means.row(1).tail(1).transpose() + s.s2v * z.tail(1);
  CHECK(rel_err(p.mu_0t, mu_expected) < 1e-12);
  CHECK(p.jacobian(0, 0) == doctest::Approx(s.s2u).epsilon(1e-12));
  CHECK(p.jacobian(2, 2) == doctest::Approx(s.s2v).epsilon(1e-12));
  CHECK(p.cov_0t(0, 0) == doctest::Approx(s.s3u).epsilon(1e-12));
  CHECK(p.cov_0t(2, 2) == doctest::Approx(s.s3v).epsilon(1e-12));
  CHECK(std::abs(p.cov_0t(0, 2)) < 1e-14);

  // Kalman mean: only the v block moves, toward y
  CHECK(rel_err(p.kalman_mean.head(2), mu_expected.head(2)) < 1e-12);
  const double expected_v =
      mu_expected[2] + s.s3v / (s.s3v + sigma_y2) * (y[0] - mu_expected[2]);
  CHECK(p.kalman_mean[2] == doctest::Approx(expected_v).epsilon(1e-12));
}

TEST_CASE("batched spherical evaluator matches the per-sample path") {
  CounterRng rng(29, 0);
  const SphericalGmmPrior prior = random_spherical_prior(rng, 37, 3, 2);
  const double sigma_y2 = 0.02;
  SphericalScoreBatch batch(prior, sigma_y2);

  const Eigen::MatrixXd states = rng.gaussian_matrix(9, 5);
  const Eigen::MatrixXd ys = rng.gaussian_matrix(9, 2);
  Eigen::MatrixXd out;
  for (const double t : {0.0, 0.25, 0.8, 0.999}) {
    batch.evaluate(states, ys, t, out);
    for (Eigen::Index r = 0; r < states.rows(); ++r) {
      const Eigen::VectorXd want = exact_score_spherical(
          states.row(r).transpose(), ys.row(r).transpose(), t, prior, sigma_y2);
      CHECK(rel_err(out.row(r).transpose(), want) < 1e-12);
    }
  }
}

TEST_CASE("component truncation changes nothing at the default cutoff") {
  CounterRng rng(30, 0);
  const SphericalGmmPrior prior = random_spherical_prior(rng, 64, 1, 1);
  const double sigma_y2 = 0.01;
  ScoreOptions truncate;
  truncate.truncate_components = true;
  const Eigen::VectorXd y = rng.gaussian_vector(1);
  for (const double t : {0.05, 0.5, 0.95}) {
    const Eigen::VectorXd z = rng.gaussian_vector(2);
    const Eigen::VectorXd a = exact_score_spherical(z, y, t, prior, sigma_y2);
    const Eigen::VectorXd b = exact_score_spherical(z, y, t, prior, sigma_y2, truncate);
    CHECK(rel_err(a, b) < 1e-12);
  }
}
