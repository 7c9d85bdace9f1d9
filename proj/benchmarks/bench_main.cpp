#include <benchmark/benchmark.h>

#include "esd/elliptic.hpp"
#include "esd/density.hpp"
#include "esd/prior.hpp"
#include "esd/reverse_ode.hpp"
#include "esd/rng.hpp"
#include "esd/score.hpp"

namespace {

esd::SphericalGmmPrior make_prior(Eigen::Index k, Eigen::Index d_u, Eigen::Index d_v) {
  esd::CounterRng rng(1, 0);
  esd::JointDataset data;
  data.u = rng.gaussian_matrix(k, d_u);
  data.v = rng.gaussian_matrix(k, d_v);
  return esd::build_spherical_prior(data, 0.05, 0.05);
}

void BM_spherical_score(benchmark::State& state) {
  const auto prior = make_prior(state.range(0), 15, 5);
  esd::CounterRng rng(2, 0);
  const Eigen::VectorXd z = rng.gaussian_vector(20);
  const Eigen::VectorXd y = rng.gaussian_vector(5);
  for (auto _ : state)
    benchmark::DoNotOptimize(esd::exact_score_spherical(z, y, 0.5, prior, 1e-4));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_spherical_score)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_spherical_score_batch(benchmark::State& state) {
  const auto prior = make_prior(state.range(0), 15, 5);
  esd::SphericalScoreBatch batch(prior, 1e-4);
  esd::CounterRng rng(3, 0);
  const Eigen::MatrixXd states = rng.gaussian_matrix(256, 20);
  const Eigen::MatrixXd ys = rng.gaussian_matrix(256, 5);
  Eigen::MatrixXd out;
  for (auto _ : state) {
    batch.evaluate(states, ys, 0.5, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * 256 * state.range(0));
}
BENCHMARK(BM_spherical_score_batch)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_dense_score(benchmark::State& state) {
  const auto prior = make_prior(state.range(0), 6, 4);
  const auto dense = esd::to_dense_prior(prior);
  const auto obs = esd::conditional_observation(6, 4, 1e-4);
  esd::CounterRng rng(4, 0);
  const Eigen::VectorXd z = rng.gaussian_vector(10);
  const Eigen::VectorXd y = rng.gaussian_vector(4);
  for (auto _ : state)
    benchmark::DoNotOptimize(esd::exact_score_general(z, y, 0.5, dense, obs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_dense_score)->Arg(10)->Arg(100);

void BM_reverse_ode_sample(benchmark::State& state) {
  const auto prior = make_prior(2000, 1, 1);
  Eigen::VectorXd y(1);
  y[0] = 0.5;
  esd::ReverseOdeConfig cfg;
  cfg.n_steps = static_cast<int>(state.range(0));
  cfg.seed = 5;
  for (auto _ : state)
    benchmark::DoNotOptimize(esd::sample_posterior(y, 64, prior, 1e-4, cfg, 1));
  state.SetItemsProcessed(state.iterations() * 64 * state.range(0));
}
BENCHMARK(BM_reverse_ode_sample)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_elliptic_solve(benchmark::State& state) {
  const auto coeffs = esd::sample_coefficients(2, 2, 1, 6)[0];
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(esd::solve_elliptic(coeffs, n));
}
BENCHMARK(BM_elliptic_solve)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_kde(benchmark::State& state) {
  esd::CounterRng rng(7, 0);
  Eigen::VectorXd samples(state.range(0));
  for (Eigen::Index i = 0; i < samples.size(); ++i) samples[i] = rng.next_gaussian();
  const esd::GridSpec grid{-6.0, 6.0, 4096};
  for (auto _ : state) benchmark::DoNotOptimize(esd::kde_density(samples, grid));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_kde)->Arg(10000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
