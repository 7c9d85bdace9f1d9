#include "esd/reverse_ode.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <vector>

#include "esd/parallel.hpp"
#include "esd/rng.hpp"

namespace esd {

namespace {

constexpr std::uint32_t kMagicLabeled = 0x45534432;  // "ESD2"

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

void write_block(std::ostream& out, const Eigen::MatrixXd& m) {
  std::vector<double> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
}

Eigen::MatrixXd read_block(std::istream& in, Eigen::Index rows, Eigen::Index cols,
                           const std::string& what) {
  Eigen::MatrixXd m(rows, cols);
  std::vector<double> row(static_cast<std::size_t>(cols));
  for (Eigen::Index r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!in) throw std::runtime_error("labeled dataset: truncated " + what + " block");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

/// Integrates a whole block of states on the shared time grid.
void integrate_block(Eigen::MatrixXd& states, const Eigen::MatrixXd& ys,
                     const ReverseOdeConfig& cfg, SphericalScoreBatch& score,
                     Eigen::MatrixXd& scratch) {
  const double dt = cfg.dt();
  for (int i = 1; i < cfg.n_steps; ++i) {
    const double t = 1.0 - i * dt;
    const ScheduleValues s = schedule(t);
    score.evaluate(states, ys, t, scratch);
    states -= dt * (s.drift_b * states - 0.5 * s.diff_sigma2 * scratch);
    if (!states.allFinite())
      throw std::runtime_error("reverse ODE: state diverged at step " + std::to_string(i));
  }
}

}  // namespace

Eigen::MatrixXd sample_posterior(const Eigen::VectorXd& y, Eigen::Index n,
                                 const SphericalGmmPrior& prior, double sigma_y2,
                                 const ReverseOdeConfig& cfg, int threads,
                                 Eigen::MatrixXd* full_states, const ScoreOptions& opts) {
  cfg.validate();
  prior.validate();
  if (y.size() != prior.d_v)
    throw std::invalid_argument("sample_posterior: y dimension mismatch");
  if (n < 1) throw std::invalid_argument("sample_posterior: n must be >= 1");

  const Eigen::Index d_x = prior.dim_x();
  Eigen::MatrixXd result(n, prior.d_u);
  if (full_states) full_states->resize(n, d_x);

  parallel_for_blocked(n, cfg.batch, resolve_threads(threads), [&](std::int64_t begin,
                                                                   std::int64_t end) {
    const Eigen::Index b = end - begin;
    Eigen::MatrixXd states(b, d_x);
    for (Eigen::Index r = 0; r < b; ++r) {
      CounterRng rng(cfg.seed, static_cast<std::uint64_t>(begin + r));
      states.row(r) = rng.gaussian_vector(d_x).transpose();
    }
    Eigen::MatrixXd ys = y.transpose().replicate(b, 1);
    SphericalScoreBatch score(prior, sigma_y2, opts);
    Eigen::MatrixXd scratch;
    integrate_block(states, ys, cfg, score, scratch);
    result.middleRows(begin, b) = states.leftCols(prior.d_u);
    if (full_states) full_states->middleRows(begin, b) = states;
  });
  return result;
}

void LabeledDataset::validate() const {
  if (u.rows() != z.rows() || u.rows() != y.rows())
    throw std::invalid_argument("LabeledDataset: row counts differ");
  if (z.cols() != u.cols() + y.cols())
    throw std::invalid_argument("LabeledDataset: z width != d_u + d_v");
  if (u.rows() < 1) throw std::invalid_argument("LabeledDataset: empty");
}

LabeledDataset generate_labeled_dataset(const ConditioningSource& source, Eigen::Index j_count,
                                        const SphericalGmmPrior& prior, double sigma_y2,
                                        const ReverseOdeConfig& cfg, int threads,
                                        const ScoreOptions& opts) {
  cfg.validate();
  prior.validate();
  if (j_count < 1) throw std::invalid_argument("generate_labeled_dataset: J must be >= 1");
  if (source.fixed_ys && source.fixed_ys->cols() != prior.d_v)
    throw std::invalid_argument("generate_labeled_dataset: fixed y dimension mismatch");

  const Eigen::Index d_x = prior.dim_x();
  LabeledDataset data;
  data.seed = cfg.seed;
  data.u.resize(j_count, prior.d_u);
  data.z.resize(j_count, d_x);
  data.y.resize(j_count, prior.d_v);

  const std::uint64_t z_seed = derive_seed(cfg.seed, "labels.z");
  const std::uint64_t y_seed = derive_seed(cfg.seed, "labels.y");
  const double sigma_y = std::sqrt(sigma_y2);
  const auto v_rows = prior.means_v();

  for (Eigen::Index j = 0; j < j_count; ++j) {
    CounterRng zrng(z_seed, static_cast<std::uint64_t>(j));
    data.z.row(j) = zrng.gaussian_vector(d_x).transpose();
    if (source.fixed_ys) {
      data.y.row(j) = source.fixed_ys->row(j % source.fixed_ys->rows());
    } else {
      CounterRng yrng(y_seed, static_cast<std::uint64_t>(j));
      const Eigen::Index row = static_cast<Eigen::Index>(
          yrng.next_below(static_cast<std::uint64_t>(prior.size())));
      data.y.row(j) = v_rows.row(row) + sigma_y * yrng.gaussian_vector(prior.d_v).transpose();
    }
  }

  parallel_for_blocked(j_count, cfg.batch, resolve_threads(threads),
                       [&](std::int64_t begin, std::int64_t end) {
                         const Eigen::Index b = end - begin;
                         Eigen::MatrixXd states = data.z.middleRows(begin, b);
                         const Eigen::MatrixXd ys = data.y.middleRows(begin, b);
                         SphericalScoreBatch score(prior, sigma_y2, opts);
                         Eigen::MatrixXd scratch;
                         integrate_block(states, ys, cfg, score, scratch);
                         data.u.middleRows(begin, b) = states.leftCols(prior.d_u);
                       });
  return data;
}

void save_labeled_dataset(const LabeledDataset& data, const std::filesystem::path& path,
                          double sigma_u2, double sigma_v2, double sigma_y2, int n_steps) {
  data.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_u32(out, kMagicLabeled);
  write_u32(out, static_cast<std::uint32_t>(data.size()));
  write_u32(out, static_cast<std::uint32_t>(data.u.cols()));
  write_u32(out, static_cast<std::uint32_t>(data.y.cols()));
  write_block(out, data.u);
  write_block(out, data.z);
  write_block(out, data.y);

  nlohmann::json sidecar{{"seed", data.seed},
                         {"n_steps", n_steps},
                         {"sigma_u2", sigma_u2},
                         {"sigma_v2", sigma_v2},
                         {"sigma_y2", sigma_y2}};
  std::ofstream side(path.string() + ".json");
  side << sidecar.dump(2) << "\n";
}

namespace {

LabeledDataset read_labeled_stream(std::ifstream& in, const std::filesystem::path& path) {
  const std::uint32_t magic = read_u32(in);
  if (magic != kMagicLabeled)
    throw std::runtime_error(path.string() + ": bad labeled-dataset magic");
  const std::uint32_t j = read_u32(in);
  const std::uint32_t du = read_u32(in);
  const std::uint32_t dv = read_u32(in);
  if (!in || j < 1 || du < 1)
    throw std::runtime_error(path.string() + ": bad labeled-dataset header");
  LabeledDataset data;
  data.u = read_block(in, j, du, "u");
  data.z = read_block(in, j, du + dv, "z");
  data.y = read_block(in, j, dv, "y");
  return data;
}

}  // namespace

LabeledDataset load_labeled_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  LabeledDataset data = read_labeled_stream(in, path);
  std::ifstream side(path.string() + ".json");
  if (side) {
    nlohmann::json sidecar;
    side >> sidecar;
    data.seed = sidecar.value("seed", std::uint64_t{0});
  }
  data.validate();
  return data;
}

}  // namespace esd
