#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "esd/dataset.hpp"

namespace esd {

/// Coefficients b_ml of the truncated sine expansion of the log-permeability
/// field k(x, y) = sum_m sum_l b_ml sin(2 pi m x) sin(2 pi l y). Flattening
/// is m-major: (1,1), (1,2), ..., (2,1), ...
struct PermeabilityCoefficients {
  Eigen::MatrixXd b;  // M x L

  Eigen::Index m_count() const { return b.rows(); }
  Eigen::Index l_count() const { return b.cols(); }
  Eigen::VectorXd flatten() const;
  static PermeabilityCoefficients from_flat(const Eigen::VectorXd& flat, Eigen::Index m,
                                            Eigen::Index l);
};

double log_permeability(const PermeabilityCoefficients& coeffs, double x, double y);

/// Node values of the Dirichlet problem on the uniform (n+1) x (n+1) lattice
/// over [0,1]^2, boundary rows exactly zero.
struct SolutionField {
  int n = 0;                // elements per side
  Eigen::VectorXd values;   // (n+1)^2 node values, x-fastest ordering

  double h() const { return 1.0 / n; }
  Eigen::Index node(int ix, int iy) const {
    return static_cast<Eigen::Index>(iy) * (n + 1) + ix;
  }
  double value(int ix, int iy) const { return values[node(ix, iy)]; }

  /// Bilinear interpolation at an interior point.
  double interpolate(double x, double y) const;
};

/// Independent draws b_ml ~ N(0, 1/(m+l)); one counter stream per draw.
std::vector<PermeabilityCoefficients> sample_coefficients(Eigen::Index m, Eigen::Index l,
                                                          Eigen::Index count,
                                                          std::uint64_t seed);

/// Solves -div(e^k grad u) = 1 with homogeneous Dirichlet data by bilinear
/// quadrilateral elements on the uniform n x n mesh; e^k is evaluated at
/// element centers. The SPD system is solved by Jacobi-preconditioned
/// conjugate gradients to relative residual `tol` (cap 10 n^2 iterations).
SolutionField solve_elliptic(const PermeabilityCoefficients& coeffs, int n, double tol = 1e-10);

struct ObservationSpec {
  Eigen::MatrixXd locations;   // N x 2, strictly interior
  double rel_noise_var = 0.0;
  std::uint64_t seed = 0;

  Eigen::Index count() const { return locations.rows(); }
  void validate() const;
};

/// N random locations, uniform over (0.1, 0.9)^2.
ObservationSpec random_observation_spec(Eigen::Index n_locations, double rel_noise_var,
                                        std::uint64_t seed);

/// Noise-free interpolation of the solution at the spec's locations.
Eigen::VectorXd interpolate_solution(const SolutionField& u, const ObservationSpec& spec);

/// Relative-noise observations u(x)(1 + eps), eps ~ N(0, rel_noise_var),
/// drawn from the (spec.seed, stream) counter stream so repeated streams
/// replay bitwise.
Eigen::VectorXd observe_solution(const SolutionField& u, const ObservationSpec& spec,
                                 std::uint64_t stream = 0);

/// Joint dataset (b_k, u_hat_k) plus everything needed to replay it.
struct PdeDataset {
  JointDataset joint;       // u block: flattened b; v block: noisy observations
  ObservationSpec spec;
  int grid_n = 32;
  Eigen::Index m_count = 2;
  Eigen::Index l_count = 2;
};

PdeDataset build_pde_dataset(Eigen::Index k_count, const ObservationSpec& spec, int grid_n,
                             std::uint64_t seed, Eigen::Index m = 2, Eigen::Index l = 2,
                             int threads = 0);

/// Dataset file (binary joint schema) + JSON sidecar with locations, noise
/// model, and seeds; enough to reproduce the stored observations bitwise.
void save_pde_dataset(const PdeDataset& data, const std::filesystem::path& path);
PdeDataset load_pde_dataset(const std::filesystem::path& path);

/// Per-sample recovery diagnostics against a ground-truth coefficient
/// vector: signed relative error of noise-free observations at each
/// location, relative MSE of the log-permeability field on the lattice, and
/// relative MSE of the solution values at the observed locations.
struct RecoveryReport {
  Eigen::MatrixXd signed_rel_err;  // S x N
  Eigen::VectorXd perm_rel_mse;    // S
  Eigen::VectorXd sol_rel_mse;     // S
};

RecoveryReport recovery_metrics(const PermeabilityCoefficients& true_coeffs,
                                const std::vector<PermeabilityCoefficients>& generated,
                                const ObservationSpec& spec, int grid_n, int threads = 0);

void save_recovery_report(const RecoveryReport& report, const std::filesystem::path& json_path);
void save_solution_csv(const SolutionField& u, const std::filesystem::path& path);

}  // namespace esd
