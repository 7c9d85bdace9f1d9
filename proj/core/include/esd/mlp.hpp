#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "esd/reverse_ode.hpp"

namespace esd {

/// Feed-forward network F(y, z) -> u with tanh hidden layers and a linear
/// output. The input is the concatenation (y, z), so layer_sizes.front() must
/// equal d_v + (d_u + d_v) and layer_sizes.back() equals d_u.
struct MlpModel {
  std::vector<Eigen::Index> layer_sizes;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: sizes[l+1] x sizes[l]
  std::vector<Eigen::VectorXd> biases;   // biases[l]: sizes[l+1]

  Eigen::Index input_dim() const { return layer_sizes.front(); }
  Eigen::Index output_dim() const { return layer_sizes.back(); }
  Eigen::Index layer_count() const { return static_cast<Eigen::Index>(weights.size()); }
  Eigen::Index parameter_count() const;
  void validate() const;
};

/// Scale-balanced uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
MlpModel init_mlp(const std::vector<Eigen::Index>& layer_sizes, std::uint64_t seed);

Eigen::VectorXd mlp_forward(const MlpModel& model, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& z);

/// Batched forward: rows of `inputs` are (y, z) concatenations.
Eigen::MatrixXd mlp_forward_batch(const MlpModel& model, const Eigen::MatrixXd& inputs);

/// Parameter-shaped gradient container.
struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Mean over the batch of the squared residual norm, plus its gradient via
/// reverse-mode accumulation.
std::pair<double, MlpGradients> loss_and_grad(const MlpModel& model,
                                              const Eigen::MatrixXd& inputs,
                                              const Eigen::MatrixXd& targets);

struct AdamState {
  std::vector<Eigen::MatrixXd> m_weights, v_weights;
  std::vector<Eigen::VectorXd> m_biases, v_biases;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState create(const MlpModel& model, double lr);
};

void adam_step(AdamState& state, MlpModel& model, const MlpGradients& grads);

struct TrainConfig {
  int epochs = 1;
  int batch_size = 0;  // 0 => full batch; an "epoch" is then one ADAM step
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::vector<Eigen::Index> hidden = {50, 50};

  void validate() const;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> loss_history;  // one entry per epoch
};

/// Trains on the labeled triples: inputs (y, z), targets u. Deterministic
/// given (seed, data, config). Throws on non-finite loss, naming the epoch.
TrainResult train_amortized(const LabeledDataset& data, const TrainConfig& cfg);

/// Pushes fresh Gaussian noise through the trained network at a fixed y.
Eigen::MatrixXd mlp_sample(const MlpModel& model, const Eigen::VectorXd& y, Eigen::Index n,
                           std::uint64_t seed);

/// Checkpoint: one file holding a JSON header (layer sizes, activation,
/// seed, optional normalization reference) followed by the raw little-endian
/// parameter blob.
void save_mlp(const MlpModel& model, const std::filesystem::path& path,
              std::uint64_t seed = 0, const std::string& normalization_ref = {});
MlpModel load_mlp(const std::filesystem::path& path);

void save_loss_history(const std::vector<double>& history, const std::filesystem::path& path);

}  // namespace esd
