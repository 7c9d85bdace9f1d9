#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "esd/dataset.hpp"
#include "esd/mixture.hpp"
#include "esd/normalize.hpp"
#include "esd/prior.hpp"
#include "esd/rng.hpp"

using namespace esd;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "esd_test_prior";
  fs::create_directories(dir);
  return dir / name;
}

JointDataset random_dataset(CounterRng& rng, Eigen::Index k, Eigen::Index d_u,
                            Eigen::Index d_v) {
  JointDataset data;
  data.u = rng.gaussian_matrix(k, d_u);
  data.v = rng.gaussian_matrix(k, d_v);
  return data;
}

}  // namespace

TEST_CASE("csv round trip preserves the matrix exactly") {
  JointDataset data;
  data.u.resize(4, 1);
  data.v.resize(4, 1);
  data.u << 0.25, -1.75, 3.0, 1e-17;
  data.v << 1.0 / 3.0, 2.0, -0.125, 9.875;

  const fs::path path = temp_file("round.csv");
  save_joint_dataset(data, path, DatasetFormat::kCsv);
  const JointDataset loaded = load_joint_dataset(path);
  CHECK(loaded.size() == 4);
  CHECK((loaded.u - data.u).norm() == 0.0);
  CHECK((loaded.v - data.v).norm() == 0.0);
}

TEST_CASE("csv loader rejects NaN and malformed rows") {
  const fs::path path = temp_file("bad.csv");
  {
    std::ofstream out(path);
    out << "# du=1 dv=1\n0.5,NaN\n";
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(load_joint_dataset(path)),
                       doctest::Contains("row 1"), std::runtime_error);

  {
    std::ofstream out(path);
    out << "# du=1 dv=1\n0.5,1.0,2.0\n";
  }
  CHECK_THROWS_AS(static_cast<void>(load_joint_dataset(path)), std::runtime_error);

  {
    std::ofstream out(path);
    out << "no header\n";
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(load_joint_dataset(path)),
                       doctest::Contains("schema"), std::runtime_error);
}

TEST_CASE("binary round trip is bitwise") {
  CounterRng rng(5, 0);
  const JointDataset data = random_dataset(rng, 17, 3, 2);
  const fs::path path = temp_file("round.bin");
  save_joint_dataset(data, path, DatasetFormat::kBinary);
  const JointDataset loaded = load_joint_dataset(path);
  CHECK((loaded.u - data.u).norm() == 0.0);
  CHECK((loaded.v - data.v).norm() == 0.0);
  // format auto-detection picks binary by magic
  const JointDataset agnostic = load_joint_dataset(path, DatasetFormat::kAuto);
  CHECK((agnostic.joint() - data.joint()).norm() == 0.0);
}

TEST_CASE("z-score of two points, fixed point, and inversion") {
  JointDataset data;
  data.u.resize(2, 1);
  data.v.resize(2, 1);
  data.u << 0.0, 2.0;
  data.v << -3.0, 5.0;
  auto [normalized, stats] = zscore_normalize(data);
  CHECK(stats.mean[0] == doctest::Approx(1.0));
  CHECK(stats.std[0] == doctest::Approx(1.0));  // population convention
  CHECK(normalized.u(0, 0) == doctest::Approx(-1.0));
  CHECK(normalized.u(1, 0) == doctest::Approx(1.0));

  auto [twice, stats2] = zscore_normalize(normalized);
  CHECK((twice.joint() - normalized.joint()).lpNorm<Eigen::Infinity>() < 1e-10);

  const JointDataset back = stats.invert(normalized);
  CHECK((back.joint() - data.joint()).lpNorm<Eigen::Infinity>() < 1e-10);

  Eigen::VectorXd y(1);
  y[0] = 5.0;
  const Eigen::VectorXd yn = stats.normalize_v(y, 1);
  CHECK((stats.denormalize_v(yn, 1) - y).norm() < 1e-12);
}

TEST_CASE("z-score rejects constant columns by index") {
  JointDataset data;
  data.u.resize(3, 1);
  data.v.resize(3, 1);
  data.u << 1.0, 1.0, 1.0;
  data.v << 0.0, 1.0, 2.0;
  CHECK_THROWS_WITH_AS(static_cast<void>(zscore_normalize(data)), doctest::Contains("column 0"),
                       std::invalid_argument);
}

TEST_CASE("nearest-neighbor bandwidth: two points and duplicates") {
  JointDataset data;
  data.u.resize(2, 1);
  data.v.resize(2, 1);
  data.u << 0.0, 1.0;
  data.v << 0.0, 1.0;
  CHECK(nearest_neighbor_bandwidth(data) == doctest::Approx(1.0));

  JointDataset dup;
  dup.u.resize(3, 1);
  dup.v.resize(3, 1);
  dup.u << 0.5, 0.5, 0.5;
  dup.v << -1.0, -1.0, -1.0;
  CHECK(nearest_neighbor_bandwidth(dup) == doctest::Approx(0.0));

  JointDataset tiny;
  tiny.u.resize(1, 1);
  tiny.v.resize(1, 1);
  tiny.u << 0.0;
  tiny.v << 0.0;
  CHECK_THROWS_AS(static_cast<void>(nearest_neighbor_bandwidth(tiny)), std::invalid_argument);
}

TEST_CASE("nearest-neighbor bandwidth equals a naive double loop") {
  CounterRng rng(9, 0);
  JointDataset data;
  data.u.resize(100, 1);
  data.v.resize(100, 1);
  for (int i = 0; i < 100; ++i) {
    data.u(i, 0) = rng.next_double();
    data.v(i, 0) = rng.next_double();
  }
  double acc = 0.0;
  for (int i = 0; i < 100; ++i) {
    double best = 1e300;
    for (int j = 0; j < 100; ++j) {
      if (i == j) continue;
      const double du = data.u(i, 0) - data.u(j, 0);
      const double dv = data.v(i, 0) - data.v(j, 0);
      best = std::min(best, du * du + dv * dv);
    }
    acc += best;
  }
  const double naive = acc / 100.0 / 2.0;
  CHECK(nearest_neighbor_bandwidth(data) == doctest::Approx(naive).epsilon(1e-14));
  CHECK(nearest_neighbor_bandwidth(data, 2) == doctest::Approx(naive).epsilon(1e-14));
}

TEST_CASE("spherical prior construction and weights") {
  CounterRng rng(10, 0);
  const JointDataset data = random_dataset(rng, 500, 1, 1);
  const SphericalGmmPrior prior = build_spherical_prior(data, 0.005, 0.005);
  CHECK(prior.size() == 500);
  CHECK(prior.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(prior.weights[0] == doctest::Approx(1.0 / 500));
  CHECK((prior.means_u() - data.u).norm() == 0.0);

  const JointDataset one = random_dataset(rng, 1, 2, 1);
  const SphericalGmmPrior single = build_spherical_prior(one, 0.1, 0.2);
  CHECK(single.weights[0] == doctest::Approx(1.0));

  CHECK_THROWS_AS(static_cast<void>(build_spherical_prior(data, -0.1, 0.1)),
                  std::invalid_argument);
}

TEST_CASE("dense embedding carries the block covariance") {
  CounterRng rng(11, 0);
  const JointDataset data = random_dataset(rng, 3, 2, 1);
  const SphericalGmmPrior prior = build_spherical_prior(data, 0.1, 0.2);
  const DenseGmmPrior dense = to_dense_prior(prior);
  Eigen::VectorXd diag(3);
  diag << 0.1, 0.1, 0.2;
  for (const auto& cov : dense.covariances)
    CHECK((cov - Eigen::MatrixXd(diag.asDiagonal())).norm() == 0.0);

  const SphericalGmmPrior unit = build_spherical_prior(data, 1.0, 1.0);
  const DenseGmmPrior unit_dense = to_dense_prior(unit);
  CHECK((unit_dense.covariances[0] - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
}

TEST_CASE("spherical and dense densities agree at random points") {
  CounterRng rng(12, 0);
  const JointDataset data = random_dataset(rng, 40, 2, 1);
  const SphericalGmmPrior prior = build_spherical_prior(data, 0.3, 0.7);
  const GaussianMixture dense = mixture_from_prior(to_dense_prior(prior));

  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::VectorXd x = rng.gaussian_vector(3);
    // direct spherical evaluation via the blocked quadratic form
    double acc = 0.0;
    for (Eigen::Index k = 0; k < prior.size(); ++k) {
      const double qu =
          (x.head(2) - prior.means_u().row(k).transpose()).squaredNorm() / prior.sigma_u2;
      const double qv =
          (x.tail(1) - prior.means_v().row(k).transpose()).squaredNorm() / prior.sigma_v2;
      const double norm = std::pow(2.0 * M_PI * prior.sigma_u2, -1.0) *
                          std::pow(2.0 * M_PI * prior.sigma_v2, -0.5);
      acc += prior.weights[k] * norm * std::exp(-0.5 * (qu + qv));
    }
    CHECK(std::log(acc) == doctest::Approx(dense.log_density(x)).epsilon(1e-12));
  }
}
