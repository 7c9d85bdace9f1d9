#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "esd/mlp.hpp"

namespace esd {

enum class ExperimentId { kBimodal, kGmm20d, kElliptic, kCustom };

std::string to_string(ExperimentId id);
ExperimentId experiment_from_string(const std::string& name);

/// Fully resolved experiment configuration. Defaults per experiment id match
/// the published settings of the corresponding study; everything is
/// overridable from the config file.
struct ExperimentConfig {
  ExperimentId experiment = ExperimentId::kBimodal;
  std::uint64_t seed = 42;
  int threads = 0;  // 0 = all cores; ESD_THREADS overrides
  std::filesystem::path out = "out";

  // data source: external file, or seeded generation of `data_k` samples
  std::string data_path;
  Eigen::Index data_k = 5000;

  // bimodal benchmark
  double bimodal_sigma_true2 = 0.1;
  double bimodal_y = 1.0;

  // 20-D two-mode benchmark
  Eigen::Index gmm_d_u = 15;
  Eigen::Index gmm_d_v = 5;
  std::vector<double> gmm_y_scales = {0.0, -0.5, 0.5};  // multiples of 1_dv

  // elliptic benchmark
  int pde_grid_n = 32;
  Eigen::Index pde_n_obs = 10;
  double pde_rel_noise_var = 0.01;
  Eigen::Index pde_m = 2;
  Eigen::Index pde_l = 2;
  Eigen::Index pde_eval_samples = 2000;   // prior/posterior samples per test case
  double pde_sigma_y2_high = 1.0;         // over-smoothing comparison point

  // custom runs
  std::vector<double> custom_y;

  // prior
  double sigma_u2 = 0.005;
  bool sigma_u2_auto = false;  // nearest-neighbor heuristic instead of the value
  double sigma_v2 = 0.005;
  bool sigma_v2_auto = false;
  double sigma_y2 = 1e-4;
  bool normalize = false;

  // reverse ODE
  int n_steps = 1000;
  int ode_batch = 256;

  // labeling + training
  Eigen::Index label_count = 2000;
  int train_epochs = 5000;
  int train_batch_size = 0;  // 0 = full batch
  double train_lr = 1e-3;
  std::vector<Eigen::Index> train_hidden = {50, 50};

  // evaluation
  Eigen::Index eval_samples = 10000;
  Eigen::Index eval_nn_samples = 50000;
  int grid_points = 4096;
  double kde_bandwidth = 0.0;  // <= 0: Silverman
  bool truncate = false;       // component truncation in score sums

  // convergence sweep
  std::vector<int> convergence_steps = {8, 16, 32, 64, 128, 256, 512, 1024};

  /// Canonical key=value rendering; parsing it back yields the same config.
  std::string serialize() const;

  TrainConfig train_config() const;

  /// Field-level issues, one "field: what" string each; empty when valid.
  std::vector<std::string> problems() const;
  /// Throws std::invalid_argument listing every problem.
  void validate() const;
};

ExperimentConfig default_config(ExperimentId id);

/// Parses the key=value format (or JSON when the file starts with '{'),
/// applies the experiment's defaults, and validates. All schema problems are
/// reported together, each with its field path.
ExperimentConfig validate_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);

}  // namespace esd
