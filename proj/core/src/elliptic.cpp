#include "esd/elliptic.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

#include "esd/parallel.hpp"
#include "esd/rng.hpp"

namespace esd {

Eigen::VectorXd PermeabilityCoefficients::flatten() const {
  Eigen::VectorXd flat(b.size());
  Eigen::Index i = 0;
  for (Eigen::Index m = 0; m < b.rows(); ++m)
    for (Eigen::Index l = 0; l < b.cols(); ++l) flat[i++] = b(m, l);
  return flat;
}

PermeabilityCoefficients PermeabilityCoefficients::from_flat(const Eigen::VectorXd& flat,
                                                             Eigen::Index m, Eigen::Index l) {
  if (flat.size() != m * l)
    throw std::invalid_argument("PermeabilityCoefficients: flat length != M*L");
  PermeabilityCoefficients c;
  c.b.resize(m, l);
  Eigen::Index i = 0;
  for (Eigen::Index mi = 0; mi < m; ++mi)
    for (Eigen::Index li = 0; li < l; ++li) c.b(mi, li) = flat[i++];
  return c;
}

double log_permeability(const PermeabilityCoefficients& coeffs, double x, double y) {
  double acc = 0.0;
  for (Eigen::Index m = 0; m < coeffs.m_count(); ++m)
    for (Eigen::Index l = 0; l < coeffs.l_count(); ++l)
      acc += coeffs.b(m, l) * std::sin(2.0 * std::numbers::pi * (m + 1) * x) *
             std::sin(2.0 * std::numbers::pi * (l + 1) * y);
  return acc;
}

double SolutionField::interpolate(double x, double y) const {
  if (!(x >= 0.0) || !(x <= 1.0) || !(y >= 0.0) || !(y <= 1.0))
    throw std::invalid_argument("SolutionField::interpolate: point outside [0,1]^2");
  const double hx = h();
  int ix = std::min(n - 1, static_cast<int>(x / hx));
  int iy = std::min(n - 1, static_cast<int>(y / hx));
  const double sx = x / hx - ix;
  const double sy = y / hx - iy;
  return (1 - sx) * (1 - sy) * value(ix, iy) + sx * (1 - sy) * value(ix + 1, iy) +
         (1 - sx) * sy * value(ix, iy + 1) + sx * sy * value(ix + 1, iy + 1);
}

std::vector<PermeabilityCoefficients> sample_coefficients(Eigen::Index m, Eigen::Index l,
                                                          Eigen::Index count,
                                                          std::uint64_t seed) {
  if (m < 1 || l < 1) throw std::invalid_argument("sample_coefficients: need M, L >= 1");
  std::vector<PermeabilityCoefficients> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    PermeabilityCoefficients c;
    c.b.resize(m, l);
    for (Eigen::Index mi = 0; mi < m; ++mi)
      for (Eigen::Index li = 0; li < l; ++li)
        c.b(mi, li) = rng.next_gaussian() / std::sqrt(static_cast<double>(mi + li + 2));
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

// Q1 stiffness of the unit Laplacian on a square cell (h-independent in 2-D),
// local order SW, SE, NE, NW.
constexpr double kQ1[4][4] = {{4, -1, -2, -1}, {-1, 4, -1, -2}, {-2, -1, 4, -1}, {-1, -2, -1, 4}};

struct ElementGrid {
  int n;
  Eigen::VectorXd coef;  // n*n element coefficients e^k / 6

  Eigen::Index elem(int ex, int ey) const { return static_cast<Eigen::Index>(ey) * n + ex; }
};

void apply_operator(const ElementGrid& grid, const Eigen::VectorXd& in, Eigen::VectorXd& out) {
  const int n = grid.n;
  out.setZero();
  for (int ey = 0; ey < n; ++ey) {
    for (int ex = 0; ex < n; ++ex) {
      const double c = grid.coef[grid.elem(ex, ey)];
      const Eigen::Index i00 = static_cast<Eigen::Index>(ey) * (n + 1) + ex;
      const Eigen::Index idx[4] = {i00, i00 + 1, i00 + n + 2, i00 + n + 1};
      const double local[4] = {in[idx[0]], in[idx[1]], in[idx[2]], in[idx[3]]};
      for (int a = 0; a < 4; ++a) {
        double acc = 0.0;
        for (int b = 0; b < 4; ++b) acc += kQ1[a][b] * local[b];
        out[idx[a]] += c * acc;
      }
    }
  }
}

void zero_boundary(int n, Eigen::VectorXd& v) {
  for (int ix = 0; ix <= n; ++ix) {
    v[ix] = 0.0;
    v[static_cast<Eigen::Index>(n) * (n + 1) + ix] = 0.0;
  }
  for (int iy = 0; iy <= n; ++iy) {
    v[static_cast<Eigen::Index>(iy) * (n + 1)] = 0.0;
    v[static_cast<Eigen::Index>(iy) * (n + 1) + n] = 0.0;
  }
}

}  // namespace

SolutionField solve_elliptic(const PermeabilityCoefficients& coeffs, int n, double tol) {
  if (n < 4) throw std::invalid_argument("solve_elliptic: need n >= 4");
  const double h = 1.0 / n;

  ElementGrid grid;
  grid.n = n;
  grid.coef.resize(static_cast<Eigen::Index>(n) * n);
  for (int ey = 0; ey < n; ++ey)
    for (int ex = 0; ex < n; ++ex)
      grid.coef[grid.elem(ex, ey)] =
          std::exp(log_permeability(coeffs, (ex + 0.5) * h, (ey + 0.5) * h)) / 6.0;

  const Eigen::Index n_nodes = static_cast<Eigen::Index>(n + 1) * (n + 1);

  // Load vector for f = 1: h^2/4 per element node, boundary masked.
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_nodes);
  for (int ey = 0; ey < n; ++ey)
    for (int ex = 0; ex < n; ++ex) {
      const Eigen::Index i00 = static_cast<Eigen::Index>(ey) * (n + 1) + ex;
      for (const Eigen::Index i : {i00, i00 + 1, i00 + n + 2, i00 + n + 1})
        rhs[i] += 0.25 * h * h;
    }
  zero_boundary(n, rhs);

  // Jacobi preconditioner from the assembled diagonal.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_nodes);
  for (int ey = 0; ey < n; ++ey)
    for (int ex = 0; ex < n; ++ex) {
      const double c = grid.coef[grid.elem(ex, ey)];
      const Eigen::Index i00 = static_cast<Eigen::Index>(ey) * (n + 1) + ex;
      for (const Eigen::Index i : {i00, i00 + 1, i00 + n + 2, i00 + n + 1}) diag[i] += 4.0 * c;
    }

  SolutionField field;
  field.n = n;
  field.values = Eigen::VectorXd::Zero(n_nodes);

  Eigen::VectorXd r = rhs;  // x = 0 initially
  Eigen::VectorXd z(n_nodes), p(n_nodes), ap(n_nodes);
  const double rhs_norm = rhs.norm();
  const long max_iters = 10L * n * n;

  z = r.cwiseQuotient(diag.cwiseMax(1e-300));
  zero_boundary(n, z);
  p = z;
  double rz = r.dot(z);
  double res_rel = r.norm() / rhs_norm;
  for (long it = 0; it < max_iters && res_rel > tol; ++it) {
    apply_operator(grid, p, ap);
    zero_boundary(n, ap);
    const double alpha = rz / p.dot(ap);
    field.values += alpha * p;
    r -= alpha * ap;
    res_rel = r.norm() / rhs_norm;
    z = r.cwiseQuotient(diag.cwiseMax(1e-300));
    zero_boundary(n, z);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  if (res_rel > tol)
    throw std::runtime_error("solve_elliptic: CG stalled at relative residual " +
                             std::to_string(res_rel));
  zero_boundary(n, field.values);
  return field;
}

void ObservationSpec::validate() const {
  if (locations.rows() < 1 || locations.cols() != 2)
    throw std::invalid_argument("ObservationSpec: locations must be N x 2 with N >= 1");
  for (Eigen::Index i = 0; i < locations.rows(); ++i) {
    const double x = locations(i, 0), y = locations(i, 1);
    if (!(x > 0.0) || !(x < 1.0) || !(y > 0.0) || !(y < 1.0))
      throw std::invalid_argument("ObservationSpec: location " + std::to_string(i) +
                                  " is not strictly interior");
  }
  if (rel_noise_var < 0.0)
    throw std::invalid_argument("ObservationSpec: negative noise variance");
}

ObservationSpec random_observation_spec(Eigen::Index n_locations, double rel_noise_var,
                                        std::uint64_t seed) {
  ObservationSpec spec;
  spec.rel_noise_var = rel_noise_var;
  spec.seed = seed;
  spec.locations.resize(n_locations, 2);
  CounterRng rng(seed, /*stream=*/0x6c6f63);  // "loc"
  for (Eigen::Index i = 0; i < n_locations; ++i) {
    spec.locations(i, 0) = 0.1 + 0.8 * rng.next_double();
    spec.locations(i, 1) = 0.1 + 0.8 * rng.next_double();
  }
  spec.validate();
  return spec;
}

Eigen::VectorXd interpolate_solution(const SolutionField& u, const ObservationSpec& spec) {
  Eigen::VectorXd out(spec.count());
  for (Eigen::Index i = 0; i < spec.count(); ++i)
    out[i] = u.interpolate(spec.locations(i, 0), spec.locations(i, 1));
  return out;
}

Eigen::VectorXd observe_solution(const SolutionField& u, const ObservationSpec& spec,
                                 std::uint64_t stream) {
  spec.validate();
  Eigen::VectorXd out = interpolate_solution(u, spec);
  if (spec.rel_noise_var > 0.0) {
    CounterRng rng(spec.seed, stream);
    const double sd = std::sqrt(spec.rel_noise_var);
    for (Eigen::Index i = 0; i < out.size(); ++i)
      out[i] *= 1.0 + sd * rng.next_gaussian();
  }
  return out;
}

PdeDataset build_pde_dataset(Eigen::Index k_count, const ObservationSpec& spec, int grid_n,
                             std::uint64_t seed, Eigen::Index m, Eigen::Index l, int threads) {
  if (k_count < 1) throw std::invalid_argument("build_pde_dataset: K must be >= 1");
  spec.validate();
  const auto coeffs =
      sample_coefficients(m, l, k_count, derive_seed(seed, "pde.coefficients"));

  PdeDataset data;
  data.spec = spec;
  data.grid_n = grid_n;
  data.m_count = m;
  data.l_count = l;
  data.joint.u.resize(k_count, m * l);
  data.joint.v.resize(k_count, spec.count());

  parallel_for(k_count, resolve_threads(threads), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t k = begin; k < end; ++k) {
      const SolutionField u = solve_elliptic(coeffs[static_cast<std::size_t>(k)], grid_n);
      data.joint.u.row(k) = coeffs[static_cast<std::size_t>(k)].flatten().transpose();
      data.joint.v.row(k) =
          observe_solution(u, spec, static_cast<std::uint64_t>(k)).transpose();
    }
  });
  data.joint.validate();
  return data;
}

void save_pde_dataset(const PdeDataset& data, const std::filesystem::path& path) {
  save_joint_dataset(data.joint, path, DatasetFormat::kBinary);
  nlohmann::json side;
  side["grid_n"] = data.grid_n;
  side["m"] = data.m_count;
  side["l"] = data.l_count;
  side["rel_noise_var"] = data.spec.rel_noise_var;
  side["seed"] = data.spec.seed;
  auto& locs = side["locations"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < data.spec.count(); ++i)
    locs.push_back({data.spec.locations(i, 0), data.spec.locations(i, 1)});
  std::ofstream out(path.string() + ".json");
  if (!out) throw std::runtime_error("cannot write " + path.string() + ".json");
  out << side.dump(2) << "\n";
}

PdeDataset load_pde_dataset(const std::filesystem::path& path) {
  PdeDataset data;
  data.joint = load_joint_dataset(path, DatasetFormat::kBinary);
  std::ifstream in(path.string() + ".json");
  if (!in) throw std::runtime_error("missing sidecar " + path.string() + ".json");
  nlohmann::json side;
  in >> side;
  data.grid_n = side.at("grid_n").get<int>();
  data.m_count = side.at("m").get<Eigen::Index>();
  data.l_count = side.at("l").get<Eigen::Index>();
  data.spec.rel_noise_var = side.at("rel_noise_var").get<double>();
  data.spec.seed = side.at("seed").get<std::uint64_t>();
  const auto& locs = side.at("locations");
  data.spec.locations.resize(static_cast<Eigen::Index>(locs.size()), 2);
  for (Eigen::Index i = 0; i < data.spec.locations.rows(); ++i) {
    data.spec.locations(i, 0) = locs[static_cast<std::size_t>(i)][0].get<double>();
    data.spec.locations(i, 1) = locs[static_cast<std::size_t>(i)][1].get<double>();
  }
  data.spec.validate();
  return data;
}

RecoveryReport recovery_metrics(const PermeabilityCoefficients& true_coeffs,
                                const std::vector<PermeabilityCoefficients>& generated,
                                const ObservationSpec& spec, int grid_n, int threads) {
  if (generated.empty()) throw std::invalid_argument("recovery_metrics: no generated samples");
  spec.validate();

  const SolutionField u_true = solve_elliptic(true_coeffs, grid_n);
  const Eigen::VectorXd obs_true = interpolate_solution(u_true, spec);
  for (Eigen::Index i = 0; i < obs_true.size(); ++i)
    if (obs_true[i] == 0.0)
      throw std::runtime_error("recovery_metrics: true solution vanishes at location " +
                               std::to_string(i));

  const int nodes = grid_n + 1;
  Eigen::VectorXd k_true(static_cast<Eigen::Index>(nodes) * nodes);
  for (int iy = 0; iy < nodes; ++iy)
    for (int ix = 0; ix < nodes; ++ix)
      k_true[static_cast<Eigen::Index>(iy) * nodes + ix] =
          log_permeability(true_coeffs, static_cast<double>(ix) / grid_n,
                           static_cast<double>(iy) / grid_n);
  const double k_true_ms = k_true.squaredNorm() / static_cast<double>(k_true.size());
  const double obs_true_ms = obs_true.squaredNorm() / static_cast<double>(obs_true.size());

  const auto s_count = static_cast<Eigen::Index>(generated.size());
  RecoveryReport report;
  report.signed_rel_err.resize(s_count, spec.count());
  report.perm_rel_mse.resize(s_count);
  report.sol_rel_mse.resize(s_count);

  parallel_for(s_count, resolve_threads(threads), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t s = begin; s < end; ++s) {
      const auto& coeffs = generated[static_cast<std::size_t>(s)];
      const SolutionField u = solve_elliptic(coeffs, grid_n);
      const Eigen::VectorXd obs = interpolate_solution(u, spec);
      report.signed_rel_err.row(s) =
          ((obs - obs_true).array() / obs_true.array()).transpose();
      report.sol_rel_mse[s] =
          (obs - obs_true).squaredNorm() / static_cast<double>(obs.size()) / obs_true_ms;
      double acc = 0.0;
      for (int iy = 0; iy < nodes; ++iy)
        for (int ix = 0; ix < nodes; ++ix) {
          const double diff = log_permeability(coeffs, static_cast<double>(ix) / grid_n,
                                               static_cast<double>(iy) / grid_n) -
                              k_true[static_cast<Eigen::Index>(iy) * nodes + ix];
          acc += diff * diff;
        }
      report.perm_rel_mse[s] = acc / static_cast<double>(k_true.size()) / k_true_ms;
    }
  });
  return report;
}

void save_recovery_report(const RecoveryReport& report, const std::filesystem::path& json_path) {
  nlohmann::json j;
  auto& err = j["signed_rel_err"] = nlohmann::json::array();
  for (Eigen::Index s = 0; s < report.signed_rel_err.rows(); ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index i = 0; i < report.signed_rel_err.cols(); ++i)
      row.push_back(report.signed_rel_err(s, i));
    err.push_back(std::move(row));
  }
  j["perm_rel_mse"] = std::vector<double>(report.perm_rel_mse.begin(), report.perm_rel_mse.end());
  j["sol_rel_mse"] = std::vector<double>(report.sol_rel_mse.begin(), report.sol_rel_mse.end());
  std::ofstream out(json_path);
  if (!out) throw std::runtime_error("cannot write " + json_path.string());
  out << j.dump(2) << "\n";
}

void save_solution_csv(const SolutionField& u, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y,u\n";
  out.precision(12);
  for (int iy = 0; iy <= u.n; ++iy)
    for (int ix = 0; ix <= u.n; ++ix)
      out << ix * u.h() << ',' << iy * u.h() << ',' << u.value(ix, iy) << '\n';
}

}  // namespace esd
