#include "esd/density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace esd {

void GridSpec::validate() const {
  if (!(lo < hi)) throw std::invalid_argument("GridSpec: lo must be < hi");
  if (n_points < 2) throw std::invalid_argument("GridSpec: need >= 2 points");
}

bool DensityGrid::same_grid(const DensityGrid& other) const {
  return lo == other.lo && hi == other.hi && values.size() == other.values.size();
}

double silverman_bandwidth(const Eigen::VectorXd& samples) {
  const Eigen::Index n = samples.size();
  if (n < 2) throw std::invalid_argument("silverman_bandwidth: need >= 2 samples");
  const double mean = samples.mean();
  const double var = (samples.array() - mean).square().sum() / static_cast<double>(n - 1);
  if (!(var > 0.0))
    throw std::invalid_argument("silverman_bandwidth: zero sample variance");
  return 1.06 * std::sqrt(var) * std::pow(static_cast<double>(n), -0.2);
}

DensityGrid kde_density(const Eigen::VectorXd& samples, const GridSpec& grid, double bandwidth) {
  grid.validate();
  if (samples.size() < 2) throw std::invalid_argument("kde_density: need >= 2 samples");
  const double h = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(samples);

  DensityGrid out;
  out.lo = grid.lo;
  out.hi = grid.hi;
  out.values = Eigen::VectorXd::Zero(grid.n_points);
  const double dx = grid.spacing();
  const double cutoff = 8.0 * h;
  const double norm =
      1.0 / (static_cast<double>(samples.size()) * h * std::sqrt(2.0 * std::numbers::pi));

  for (Eigen::Index s = 0; s < samples.size(); ++s) {
    const double x = samples[s];
    const int first = std::max(0, static_cast<int>(std::ceil((x - cutoff - grid.lo) / dx)));
    const int last =
        std::min(grid.n_points - 1, static_cast<int>(std::floor((x + cutoff - grid.lo) / dx)));
    for (int i = first; i <= last; ++i) {
      const double u = (grid.lo + i * dx - x) / h;
      out.values[i] += std::exp(-0.5 * u * u);
    }
  }
  out.values *= norm;
  return out;
}

double kl_riemann(const DensityGrid& p_ref, const DensityGrid& p_other) {
  if (!p_ref.same_grid(p_other))
    throw std::invalid_argument("kl_riemann: grids differ");
  constexpr double kFloor = 1e-12;
  double acc = 0.0;
  for (int i = 0; i < p_ref.n_points(); ++i) {
    const double p = p_ref.values[i];
    if (p <= 0.0) continue;
    acc += p * std::log(p / std::max(p_other.values[i], kFloor));
  }
  const double kl = acc * p_ref.spacing();
  return kl < 0.0 ? 0.0 : kl;
}

DensityGrid density_on_grid(const Mixture1d& mix, const GridSpec& grid) {
  grid.validate();
  DensityGrid out;
  out.lo = grid.lo;
  out.hi = grid.hi;
  out.values.resize(grid.n_points);
  const double dx = grid.spacing();
  // Accumulate per component over the grid; cheap relative to the exp calls.
  out.values.setZero();
  for (Eigen::Index m = 0; m < mix.weights.size(); ++m) {
    const double inv_var = 1.0 / mix.variances[m];
    const double scale =
        mix.weights[m] / std::sqrt(2.0 * std::numbers::pi * mix.variances[m]);
    for (int i = 0; i < grid.n_points; ++i) {
      const double diff = grid.lo + i * dx - mix.means[m];
      out.values[i] += scale * std::exp(-0.5 * diff * diff * inv_var);
    }
  }
  return out;
}

GridSpec make_kl_grid(std::pair<double, double> reference_envelope,
                      const Eigen::VectorXd& samples, int n_points) {
  GridSpec spec;
  spec.lo = std::min(reference_envelope.first, samples.minCoeff()) - 0.5;
  spec.hi = std::max(reference_envelope.second, samples.maxCoeff()) + 0.5;
  spec.n_points = n_points;
  spec.validate();
  return spec;
}

void save_density_csv(const DensityGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,density\n";
  out.precision(12);
  for (int i = 0; i < grid.n_points(); ++i) out << grid.point(i) << ',' << grid.values[i] << '\n';
}

}  // namespace esd
