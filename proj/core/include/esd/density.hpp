#pragma once

#include <Eigen/Core>
#include <filesystem>

#include "esd/mixture.hpp"

namespace esd {

struct GridSpec {
  double lo = 0.0;
  double hi = 1.0;
  int n_points = 4096;

  double spacing() const { return (hi - lo) / static_cast<double>(n_points - 1); }
  void validate() const;
};

/// Uniform 1-D grid with density values; the substrate for KDE and the
/// Riemann-sum KL.
struct DensityGrid {
  double lo = 0.0;
  double hi = 1.0;
  Eigen::VectorXd values;

  int n_points() const { return static_cast<int>(values.size()); }
  double spacing() const { return (hi - lo) / static_cast<double>(values.size() - 1); }
  double point(int i) const { return lo + i * spacing(); }
  double integral() const { return spacing() * values.sum(); }
  bool same_grid(const DensityGrid& other) const;
};

/// Silverman's rule 1.06 * sigma_hat * n^{-1/5} (sample std, 1/(n-1)).
double silverman_bandwidth(const Eigen::VectorXd& samples);

/// Gaussian-kernel density estimate on the grid. bandwidth <= 0 selects the
/// Silverman rule. Kernels are truncated at 8 bandwidths (relative error
/// < 1e-14). Throws on fewer than 2 samples or zero sample variance.
DensityGrid kde_density(const Eigen::VectorXd& samples, const GridSpec& grid,
                        double bandwidth = 0.0);

/// Riemann-sum KL divergence h * sum p_ref log(p_ref / max(p_other, 1e-12)).
/// Terms with p_ref = 0 contribute nothing; tiny negative totals from
/// discretization are clamped to 0. Grids must match exactly.
double kl_riemann(const DensityGrid& p_ref, const DensityGrid& p_other);

/// Evaluates a 1-D Gaussian mixture on a grid.
DensityGrid density_on_grid(const Mixture1d& mix, const GridSpec& grid);

/// Default KL grid policy: [lo - 0.5, hi + 0.5] over the union of the
/// reference envelope and the sample range.
GridSpec make_kl_grid(std::pair<double, double> reference_envelope,
                      const Eigen::VectorXd& samples, int n_points = 4096);

/// Two-column CSV (x, value) for external plotting.
void save_density_csv(const DensityGrid& grid, const std::filesystem::path& path);

}  // namespace esd
