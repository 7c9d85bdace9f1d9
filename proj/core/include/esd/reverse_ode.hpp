#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include "esd/prior.hpp"
#include "esd/schedule.hpp"
#include "esd/score.hpp"

namespace esd {

/// Forward-Euler discretization of the reverse probability-flow ODE.
/// The grid is t_i = 1 - i*dt, i = 1..n_steps, with dt = 1/n_steps: the
/// standard-normal initial condition is assigned to t_1 = 1 - dt (the drift
/// is singular at t = 1) and the state is stepped down to t = 0.
struct ReverseOdeConfig {
  int n_steps = 1000;
  std::uint64_t seed = 0;
  int batch = 256;  // samples integrated together; fixed so threading never
                    // changes per-sample arithmetic

  double dt() const { return 1.0 / static_cast<double>(n_steps); }
  void validate() const {
    if (n_steps < 2) throw std::invalid_argument("ReverseOdeConfig: n_steps must be >= 2");
    if (batch < 1) throw std::invalid_argument("ReverseOdeConfig: batch must be >= 1");
  }
};

/// Integrates one state from t = 1 - dt to t = 0. `score` maps (z, t) to the
/// conditional score at the caller's observation. Throws on non-finite
/// states, reporting the step index.
template <class ScoreFn>
Eigen::VectorXd integrate_reverse(Eigen::VectorXd z, const ReverseOdeConfig& cfg,
                                  ScoreFn&& score) {
  cfg.validate();
  if (!z.allFinite()) throw std::invalid_argument("integrate_reverse: non-finite initial state");
  const double dt = cfg.dt();
  for (int i = 1; i < cfg.n_steps; ++i) {
    const double t = 1.0 - i * dt;
    const ScheduleValues s = schedule(t);
    z -= dt * (s.drift_b * z - 0.5 * s.diff_sigma2 * score(z, t));
    if (!z.allFinite())
      throw std::runtime_error("integrate_reverse: state diverged at step " + std::to_string(i));
  }
  return z;
}

/// Posterior samples for a fixed observation. Initial noise is drawn from
/// counter-based streams keyed by (seed, sample index), so any thread count
/// reproduces the serial run bitwise. Returns the U block; `full_states`
/// receives the complete t=0 states when non-null.
Eigen::MatrixXd sample_posterior(const Eigen::VectorXd& y, Eigen::Index n,
                                 const SphericalGmmPrior& prior, double sigma_y2,
                                 const ReverseOdeConfig& cfg, int threads = 0,
                                 Eigen::MatrixXd* full_states = nullptr,
                                 const ScoreOptions& opts = {});

/// Supervised triples (u, z, y): z is the exact Gaussian noise fed to the
/// integrator, u the U block of the integrated endpoint, y the conditioning
/// value.
struct LabeledDataset {
  Eigen::MatrixXd u;  // J x d_u
  Eigen::MatrixXd z;  // J x (d_u + d_v)
  Eigen::MatrixXd y;  // J x d_v
  std::uint64_t seed = 0;

  Eigen::Index size() const { return u.rows(); }
  void validate() const;
};

/// Source of conditioning values for labeling. Default: resample v rows of
/// the training set and add N(0, sigma_y2 I) observation noise. A fixed list
/// of y values can be supplied instead.
struct ConditioningSource {
  std::optional<Eigen::MatrixXd> fixed_ys;  // rows are y values, cycled over
};

LabeledDataset generate_labeled_dataset(const ConditioningSource& source, Eigen::Index j_count,
                                        const SphericalGmmPrior& prior, double sigma_y2,
                                        const ReverseOdeConfig& cfg, int threads = 0,
                                        const ScoreOptions& opts = {});

/// Binary schema: 16-byte header (magic, J, d_u, d_v), then the u, z, y
/// blocks as row-major little-endian doubles. The JSON sidecar
/// (path + ".json") records seed, step count, and the sigma parameters.
void save_labeled_dataset(const LabeledDataset& data, const std::filesystem::path& path,
                          double sigma_u2, double sigma_v2, double sigma_y2, int n_steps);
LabeledDataset load_labeled_dataset(const std::filesystem::path& path);

}  // namespace esd
