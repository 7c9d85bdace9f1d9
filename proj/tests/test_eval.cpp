#include <doctest.h>

#include <cmath>
#include <numbers>

#include "esd/density.hpp"
#include "esd/prior.hpp"
#include "esd/references.hpp"
#include "esd/rng.hpp"

using namespace esd;

namespace {

double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("kde at the midpoint of two unit-bandwidth kernels") {
  Eigen::VectorXd samples(2);
  samples << -1.0, 1.0;
  const DensityGrid grid = kde_density(samples, {-6.0, 6.0, 1201}, 1.0);
  const int mid = 600;  // x = 0
  CHECK(grid.point(mid) == doctest::Approx(0.0));
  CHECK(grid.values[mid] == doctest::Approx((std_normal_pdf(1.0) + std_normal_pdf(-1.0)) / 2.0)
                                .epsilon(1e-10));
}

TEST_CASE("kde mass is close to one on a wide grid") {
  CounterRng rng(2, 0);
  Eigen::VectorXd samples(500);
  for (int i = 0; i < 500; ++i) samples[i] = rng.next_gaussian();
  const double h = silverman_bandwidth(samples);
  const GridSpec grid{samples.minCoeff() - 5 * h, samples.maxCoeff() + 5 * h, 4096};
  CHECK(kde_density(samples, grid, h).integral() == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("kde converges to the standard normal density") {
  CounterRng rng(3, 0);
  Eigen::VectorXd samples(100000);
  for (Eigen::Index i = 0; i < samples.size(); ++i) samples[i] = rng.next_gaussian();
  const DensityGrid grid = kde_density(samples, {-3.0, 3.0, 601});
  double worst = 0.0;
  for (int i = 0; i < grid.n_points(); ++i)
    worst = std::max(worst, std::abs(grid.values[i] - std_normal_pdf(grid.point(i))));
  CHECK(worst < 0.02);
}

TEST_CASE("kde input validation") {
  Eigen::VectorXd one(1);
  one << 0.0;
  CHECK_THROWS_AS(static_cast<void>(kde_density(one, {-1.0, 1.0, 10})), std::invalid_argument);
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(5);
  CHECK_THROWS_AS(static_cast<void>(kde_density(flat, {-1.0, 1.0, 10})), std::invalid_argument);
}

TEST_CASE("Riemann KL: zero on identical grids, Gaussian closed forms") {
  Mixture1d p;
  p.weights = Eigen::VectorXd::Ones(1);
  p.means = Eigen::VectorXd::Zero(1);
  p.variances = Eigen::VectorXd::Ones(1);

  const GridSpec wide{-8.0, 9.0, 10000};
  const DensityGrid gp = density_on_grid(p, wide);
  CHECK(kl_riemann(gp, gp) == 0.0);

  Mixture1d q1 = p;
  q1.means[0] = 1.0;
  CHECK(kl_riemann(gp, density_on_grid(q1, wide)) == doctest::Approx(0.5).epsilon(1e-3));

  Mixture1d q2 = p;
  q2.variances[0] = 4.0;
  const double expected = 0.5 * (std::log(4.0) + 0.25 - 1.0);
  CHECK(kl_riemann(gp, density_on_grid(q2, wide)) ==
        doctest::Approx(expected).epsilon(1e-3));

  const DensityGrid other = density_on_grid(p, {-8.0, 9.0, 9999});
  CHECK_THROWS_AS(static_cast<void>(kl_riemann(gp, other)), std::invalid_argument);
}

TEST_CASE("gmm conditional density: single component ignores v") {
  JointDataset data;
  data.u = Eigen::MatrixXd::Constant(1, 1, 0.7);
  data.v = Eigen::MatrixXd::Constant(1, 1, -0.3);
  const SphericalGmmPrior prior = build_spherical_prior(data, 0.04, 0.09);
  const GridSpec grid{-1.0, 2.5, 2000};
  Eigen::VectorXd v(1);
  v << 5.0;
  const DensityGrid got = gmm_conditional_density(prior, v, grid);
  Mixture1d expected;
  expected.weights = Eigen::VectorXd::Ones(1);
  expected.means = Eigen::VectorXd::Constant(1, 0.7);
  expected.variances = Eigen::VectorXd::Constant(1, 0.04);
  const DensityGrid ref = density_on_grid(expected, grid);
  CHECK((got.values - ref.values).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("Bayesian posterior marginal approaches the exact conditional as noise vanishes") {
  CounterRng rng(5, 0);
  JointDataset data;
  data.u = rng.gaussian_matrix(30, 1);
  data.v = rng.gaussian_matrix(30, 1);
  const SphericalGmmPrior prior = build_spherical_prior(data, 0.05, 0.08);
  Eigen::VectorXd v(1);
  v << 0.4;
  const GridSpec grid{-4.0, 4.0, 4096};
  const DensityGrid exact = gmm_conditional_density(prior, v, grid);
  const DensityGrid relaxed = bgmm_posterior_density(prior, 1e-10, v, grid);
  CHECK((exact.values - relaxed.values).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("gmm conditional density matches a 2-D quadrature oracle") {
  CounterRng rng(6, 0);
  JointDataset data;
  data.u = rng.gaussian_matrix(20, 1);
  data.v = rng.gaussian_matrix(20, 1);
  const SphericalGmmPrior prior = build_spherical_prior(data, 0.3, 0.5);
  Eigen::VectorXd v(1);
  v << -0.2;
  const GridSpec grid{-5.0, 5.0, 1501};
  const DensityGrid got = gmm_conditional_density(prior, v, grid);

  // p(u | v) = p(u, v) / p(v) with p(v) by quadrature over u
  const auto joint_pdf = [&](double u, double vv) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < prior.size(); ++k) {
      const double du = u - prior.means_u()(k, 0);
      const double dv = vv - prior.means_v()(k, 0);
      acc += prior.weights[k] *
             std::exp(-0.5 * (du * du / prior.sigma_u2 + dv * dv / prior.sigma_v2)) /
             (2.0 * std::numbers::pi * std::sqrt(prior.sigma_u2 * prior.sigma_v2));
    }
    return acc;
  };
  double marginal = 0.0;
  const double h = grid.spacing();
  for (int i = 0; i < grid.n_points; ++i) marginal += joint_pdf(grid.lo + i * h, v[0]) * h;
  for (int i = 0; i < grid.n_points; i += 100) {
    const double u = grid.lo + i * h;
    CHECK(got.values[i] == doctest::Approx(joint_pdf(u, v[0]) / marginal).epsilon(1e-4));
  }
}

TEST_CASE("exact bimodal posterior: symmetry, modes, mass") {
  const GridSpec grid{-2.5, 2.5, 10001};
  const DensityGrid dens = exact_bimodal_posterior(1.0, 0.1, grid);
  CHECK(dens.integral() == doctest::Approx(1.0).epsilon(1e-6));
  // even in u (grid is symmetric around 0)
  for (int i = 0; i < 400; ++i) {
    const int mirror = grid.n_points - 1 - i;
    CHECK(dens.values[i] == doctest::Approx(dens.values[mirror]).epsilon(1e-12));
  }
  // modes at +-1
  Eigen::Index argmax = 0;
  dens.values.maxCoeff(&argmax);
  CHECK(std::abs(std::abs(dens.point(static_cast<int>(argmax))) - 1.0) < 5e-3);
}

TEST_CASE("two-mode conditional weights") {
  Eigen::VectorXd mu1(20);
  mu1 << 1.35, 1.35, 1.35, 1.35, 1.35, 0.5, 0.5, 0.5, 0.5, 0.5, 0.2, 0.2, 0.2, 0.2, 0.2, 0.1,
      0.1, 0.1, 0.1, 0.1;
  const Eigen::VectorXd mu2 = -mu1;

  const GaussianMixture even =
      true_two_mode_conditional(mu1, mu2, 15, Eigen::VectorXd::Zero(5));
  CHECK(even.weights[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(even.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));

  const GaussianMixture tilted =
      true_two_mode_conditional(mu1, mu2, 15, Eigen::VectorXd::Constant(5, 0.5));
  CHECK(tilted.weights[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))).epsilon(1e-10));
}

TEST_CASE("projection onto the mode line") {
  Eigen::VectorXd mu1(3), mu2(3);
  mu1 << 1.0, 2.0, 2.0;
  mu2 << -1.0, 0.0, 0.0;
  Eigen::MatrixXd pts(2, 3);
  pts.row(0) = mu1.transpose();
  pts.row(1) = 0.5 * (mu1 + mu2).transpose();
  const Eigen::VectorXd s = project_onto_mode_line(pts, mu1, mu2);
  CHECK(s[0] == doctest::Approx((mu1 - mu2).norm() / 2.0));
  CHECK(s[1] == doctest::Approx(0.0));
  CHECK_THROWS_AS(static_cast<void>(project_onto_mode_line(pts, mu1, mu1)),
                  std::invalid_argument);
}

TEST_CASE("projected draws from the reference have tiny KL at n = 1e5") {
  Eigen::VectorXd mu1(20);
  mu1.setZero();
  mu1.head(5).setConstant(1.35);
  mu1.segment(5, 5).setConstant(0.5);
  mu1.segment(10, 5).setConstant(0.2);
  mu1.tail(5).setConstant(0.1);
  const Eigen::VectorXd mu2 = -mu1;
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(5, 0.5);
  const GaussianMixture ref = true_two_mode_conditional(mu1, mu2, 15, y);

  CounterRng rng(7, 0);
  const Eigen::Index n = 100000;
  Eigen::MatrixXd samples(n, 15);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index comp = rng.next_double() < ref.weights[0] ? 0 : 1;
    samples.row(i) = ref.means.row(comp) + rng.gaussian_vector(15).transpose();
  }

  const Eigen::VectorXd mu1_u = mu1.head(15), mu2_u = mu2.head(15);
  const Eigen::VectorXd proj = project_onto_mode_line(samples, mu1_u, mu2_u);
  const Mixture1d proj_ref =
      project_mixture(ref, 0.5 * (mu1_u + mu2_u), (mu1_u - mu2_u).normalized());
  const GridSpec grid = make_kl_grid(proj_ref.envelope(), proj);
  CHECK(kl_riemann(density_on_grid(proj_ref, grid), kde_density(proj, grid)) < 0.01);

  const PerDimensionKl pd = per_dimension_kl(samples, ref);
  CHECK(pd.mean < 0.005);

  // a constant shift strictly increases every per-dimension KL
  Eigen::MatrixXd shifted = samples;
  shifted.array() += 0.4;
  const PerDimensionKl pd_shift = per_dimension_kl(shifted, ref);
  CHECK(pd_shift.mean > pd.mean);
}
