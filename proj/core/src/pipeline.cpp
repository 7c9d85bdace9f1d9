#include "esd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "esd/density.hpp"
#include "esd/elliptic.hpp"
#include "esd/mixture.hpp"
#include "esd/mlp.hpp"
#include "esd/normalize.hpp"
#include "esd/parallel.hpp"
#include "esd/prior.hpp"
#include "esd/references.hpp"
#include "esd/reverse_ode.hpp"
#include "esd/rng.hpp"
#include "esd/score.hpp"
#include "esd/sha256.hpp"

namespace esd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// small file helpers

void write_matrix_csv(const Eigen::MatrixXd& m, const fs::path& path,
                      const std::string& prefix) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (c) out << ',';
    out << prefix << c;
  }
  out << '\n';
  out.precision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << m(r, c);
    }
    out << '\n';
  }
}

Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path.string() + ": no data rows");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

void write_json_file(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

double quantile(Eigen::VectorXd v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<Eigen::Index>(std::floor(pos));
  const auto hi = static_cast<Eigen::Index>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return (1.0 - frac) * v[lo] + frac * v[hi];
}

double iqr(const Eigen::VectorXd& v) { return quantile(v, 0.75) - quantile(v, 0.25); }

// ---------------------------------------------------------------------------
// pipeline context

struct Context {
  ExperimentConfig cfg;
  bool quiet = false;
  std::vector<fs::path> outputs;                     // committed this run
  std::map<std::string, std::uint64_t> stage_seeds;  // recorded for manifest

  fs::path file(const std::string& name) const { return cfg.out / name; }

  std::uint64_t stage_seed(const std::string& label) {
    const std::uint64_t s = derive_seed(cfg.seed, label);
    stage_seeds[label] = s;
    return s;
  }

  void log(const std::string& msg) const {
    if (!quiet) std::cout << "[esd] " << msg << "\n";
  }
};

/// Writes go to <name>.partial and are renamed on stage commit; a failing
/// stage leaves its partial files behind.
class StageFiles {
 public:
  explicit StageFiles(Context& ctx) : ctx_(ctx) {}

  fs::path file(const std::string& name) {
    const fs::path final = ctx_.file(name);
    const fs::path partial = final.string() + ".partial";
    pending_.emplace_back(partial, final);
    return partial;
  }

  void commit() {
    for (const auto& [partial, final] : pending_) {
      fs::rename(partial, final);
      ctx_.outputs.push_back(final);
      // sidecars written by the library next to the partial file
      const fs::path side = partial.string() + ".json";
      if (fs::exists(side)) {
        fs::rename(side, final.string() + ".json");
        ctx_.outputs.push_back(final.string() + ".json");
      }
    }
    pending_.clear();
  }

 private:
  Context& ctx_;
  std::vector<std::pair<fs::path, fs::path>> pending_;
};

// ---------------------------------------------------------------------------
// experiment geometry

Eigen::VectorXd gmm20_mu1() {
  Eigen::VectorXd mu(20);
  const double blocks[4] = {1.35, 0.5, 0.2, 0.1};
  for (int b = 0; b < 4; ++b)
    for (int i = 0; i < 5; ++i) mu[5 * b + i] = blocks[b];
  return mu;
}

struct Conditioning {
  std::string tag;
  Eigen::VectorXd y;  // raw (data-unit) space
};

std::string scale_tag(double scale) {
  std::ostringstream os;
  os << "s" << scale;
  std::string tag = os.str();
  std::replace(tag.begin(), tag.end(), '-', 'm');
  std::replace(tag.begin(), tag.end(), '.', 'p');
  return tag;
}

// ---------------------------------------------------------------------------
// artifact loading

JointDataset load_dataset_artifact(const Context& ctx) {
  return load_joint_dataset(ctx.file("dataset.bin"), DatasetFormat::kBinary);
}

NormalizationStats load_stats_artifact(const Context& ctx, Eigen::Index d_u, Eigen::Index d_v) {
  const fs::path path = ctx.file("normalization.json");
  if (!fs::exists(path)) return identity_stats(d_u, d_v);
  const json j = read_json_file(path);
  NormalizationStats stats;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std_ = j.at("std").get<std::vector<double>>();
  stats.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  stats.std = Eigen::Map<const Eigen::VectorXd>(std_.data(), static_cast<Eigen::Index>(std_.size()));
  return stats;
}

struct PriorArtifacts {
  SphericalGmmPrior prior;  // in normalized space when cfg.normalize
  NormalizationStats stats;
  double sigma_y2 = 0.0;
};

PriorArtifacts load_prior_artifacts(const Context& ctx) {
  const json meta = read_json_file(ctx.file("prior.json"));
  JointDataset data = load_dataset_artifact(ctx);
  PriorArtifacts art;
  art.stats = load_stats_artifact(ctx, data.dim_u(), data.dim_v());
  if (meta.at("normalize").get<bool>()) data = art.stats.apply(data);
  art.prior = build_spherical_prior(data, meta.at("sigma_u2").get<double>(),
                                    meta.at("sigma_v2").get<double>());
  art.sigma_y2 = meta.at("sigma_y2").get<double>();
  return art;
}

// elliptic test cases are derived deterministically from the master seed so
// the sample and eval stages agree without an extra artifact
struct PdeTestCase {
  PermeabilityCoefficients truth;
  Eigen::VectorXd observed;  // noisy observations used as conditioning value
};

std::vector<PdeTestCase> elliptic_test_cases(Context& ctx, const PdeDataset& data) {
  const std::uint64_t seed = ctx.stage_seed("pde.test");
  const auto truths = sample_coefficients(data.m_count, data.l_count, 2, seed);
  std::vector<PdeTestCase> cases;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const SolutionField u = solve_elliptic(truths[i], data.grid_n);
    PdeTestCase c;
    c.truth = truths[i];
    c.observed = observe_solution(u, data.spec, /*stream=*/1000000 + i);
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<Conditioning> conditioning_values(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  std::vector<Conditioning> out;
  switch (cfg.experiment) {
    case ExperimentId::kBimodal: {
      Eigen::VectorXd y(1);
      y[0] = cfg.bimodal_y;
      out.push_back({"y", y});
      break;
    }
    case ExperimentId::kGmm20d: {
      for (const double s : cfg.gmm_y_scales)
        out.push_back({scale_tag(s), Eigen::VectorXd::Constant(cfg.gmm_d_v, s)});
      break;
    }
    case ExperimentId::kElliptic: {
      const PdeDataset data = load_pde_dataset(ctx.file("dataset.bin"));
      const auto cases = elliptic_test_cases(ctx, data);
      for (std::size_t i = 0; i < cases.size(); ++i)
        out.push_back({"case" + std::to_string(i + 1), cases[i].observed});
      break;
    }
    case ExperimentId::kCustom: {
      out.push_back({"y",
                     Eigen::Map<const Eigen::VectorXd>(
                         cfg.custom_y.data(), static_cast<Eigen::Index>(cfg.custom_y.size()))});
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// stages

void stage_gen_data(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  StageFiles files(ctx);
  const fs::path target = files.file("dataset.bin");

  if (!cfg.data_path.empty()) {
    const JointDataset data = load_joint_dataset(cfg.data_path);
    save_joint_dataset(data, target, DatasetFormat::kBinary);
    files.commit();
    ctx.log("gen-data: imported " + cfg.data_path);
    return;
  }

  switch (cfg.experiment) {
    case ExperimentId::kBimodal: {
      const std::uint64_t seed = ctx.stage_seed("data");
      JointDataset data;
      data.u.resize(cfg.data_k, 1);
      data.v.resize(cfg.data_k, 1);
      const double sd = std::sqrt(cfg.bimodal_sigma_true2);
      for (Eigen::Index k = 0; k < cfg.data_k; ++k) {
        CounterRng rng(seed, static_cast<std::uint64_t>(k));
        const double u = -2.0 + 4.0 * rng.next_double();
        data.u(k, 0) = u;
        data.v(k, 0) = u * u + sd * rng.next_gaussian();
      }
      save_joint_dataset(data, target, DatasetFormat::kBinary);
      break;
    }
    case ExperimentId::kGmm20d: {
      if (cfg.gmm_d_u + cfg.gmm_d_v != 20)
        throw std::invalid_argument("gmm20d: d_u + d_v must equal 20");
      const std::uint64_t seed = ctx.stage_seed("data");
      const Eigen::VectorXd mu1 = gmm20_mu1();
      JointDataset data;
      data.u.resize(cfg.data_k, cfg.gmm_d_u);
      data.v.resize(cfg.data_k, cfg.gmm_d_v);
      for (Eigen::Index k = 0; k < cfg.data_k; ++k) {
        CounterRng rng(seed, static_cast<std::uint64_t>(k));
        const double sign = rng.next_double() < 0.5 ? 1.0 : -1.0;
        const Eigen::VectorXd x = sign * mu1 + rng.gaussian_vector(20);
        data.u.row(k) = x.head(cfg.gmm_d_u).transpose();
        data.v.row(k) = x.tail(cfg.gmm_d_v).transpose();
      }
      save_joint_dataset(data, target, DatasetFormat::kBinary);
      break;
    }
    case ExperimentId::kElliptic: {
      const ObservationSpec spec =
          random_observation_spec(cfg.pde_n_obs, cfg.pde_rel_noise_var,
                                  ctx.stage_seed("pde.locations"));
      const PdeDataset data = build_pde_dataset(cfg.data_k, spec, cfg.pde_grid_n,
                                                ctx.stage_seed("data"), cfg.pde_m, cfg.pde_l,
                                                cfg.threads);
      save_pde_dataset(data, target);
      break;
    }
    case ExperimentId::kCustom:
      throw std::runtime_error("custom experiments require data.path");
  }
  files.commit();
  ctx.log("gen-data: wrote dataset.bin (K=" + std::to_string(cfg.data_k) + ")");
}

void stage_prior(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  StageFiles files(ctx);
  JointDataset data = load_dataset_artifact(ctx);

  NormalizationStats stats = identity_stats(data.dim_u(), data.dim_v());
  if (cfg.normalize) {
    auto [normalized, s] = zscore_normalize(data);
    stats = s;
    data = std::move(normalized);
    json j{{"mean", std::vector<double>(stats.mean.begin(), stats.mean.end())},
           {"std", std::vector<double>(stats.std.begin(), stats.std.end())}};
    write_json_file(j, files.file("normalization.json"));
  }

  double nn_bw = -1.0;
  double sigma_u2 = cfg.sigma_u2;
  double sigma_v2 = cfg.sigma_v2;
  if (cfg.sigma_u2_auto || cfg.sigma_v2_auto) {
    nn_bw = nearest_neighbor_bandwidth(data, cfg.threads);
    if (nn_bw <= 0.0)
      ctx.log("warning: duplicate rows give a zero nearest-neighbor bandwidth");
    if (cfg.sigma_u2_auto) sigma_u2 = nn_bw;
    if (cfg.sigma_v2_auto) sigma_v2 = nn_bw;
  }

  json meta{{"k", data.size()},         {"d_u", data.dim_u()},
            {"d_v", data.dim_v()},      {"sigma_u2", sigma_u2},
            {"sigma_v2", sigma_v2},     {"sigma_y2", cfg.sigma_y2},
            {"normalize", cfg.normalize}, {"nn_bandwidth", nn_bw}};
  write_json_file(meta, files.file("prior.json"));
  files.commit();
  ctx.log("prior: sigma_u2=" + std::to_string(sigma_u2) +
          " sigma_v2=" + std::to_string(sigma_v2));
}

void stage_sample(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  const PriorArtifacts art = load_prior_artifacts(ctx);
  const auto conds = conditioning_values(ctx);
  const ScoreOptions opts{cfg.truncate, 45.0};

  StageFiles files(ctx);
  const Eigen::Index n =
      cfg.experiment == ExperimentId::kElliptic ? cfg.pde_eval_samples : cfg.eval_samples;

  for (const auto& cond : conds) {
    ReverseOdeConfig ode;
    ode.n_steps = cfg.n_steps;
    ode.batch = cfg.ode_batch;
    ode.seed = ctx.stage_seed("sample." + cond.tag);
    const Eigen::VectorXd y_n = art.stats.normalize_v(cond.y, art.prior.d_u);
    Eigen::MatrixXd u =
        sample_posterior(y_n, n, art.prior, art.sigma_y2, ode, cfg.threads, nullptr, opts);
    u = art.stats.denormalize_u_rows(u);
    write_matrix_csv(u, files.file("samples_dm_" + cond.tag + ".csv"), "u");
    ctx.log("sample: " + cond.tag + " (" + std::to_string(n) + " draws)");

    if (cfg.experiment == ExperimentId::kElliptic) {
      ode.seed = ctx.stage_seed("sample." + cond.tag + ".hisig");
      Eigen::MatrixXd u_hi = sample_posterior(y_n, n, art.prior, cfg.pde_sigma_y2_high, ode,
                                              cfg.threads, nullptr, opts);
      u_hi = art.stats.denormalize_u_rows(u_hi);
      write_matrix_csv(u_hi, files.file("samples_dm_" + cond.tag + "_hisig.csv"), "u");
    }
  }
  files.commit();
}

void stage_label(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.label_count == 0) {
    ctx.log("label: skipped (label.count = 0)");
    return;
  }
  const PriorArtifacts art = load_prior_artifacts(ctx);
  ReverseOdeConfig ode;
  ode.n_steps = cfg.n_steps;
  ode.batch = cfg.ode_batch;
  ode.seed = ctx.stage_seed("label");
  const ScoreOptions opts{cfg.truncate, 45.0};
  const LabeledDataset labels = generate_labeled_dataset(
      ConditioningSource{}, cfg.label_count, art.prior, art.sigma_y2, ode, cfg.threads, opts);
  StageFiles files(ctx);
  save_labeled_dataset(labels, files.file("labels.bin"), art.prior.sigma_u2, art.prior.sigma_v2,
                       art.sigma_y2, cfg.n_steps);
  files.commit();
  ctx.log("label: " + std::to_string(cfg.label_count) + " triples");
}

void stage_train(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.label_count == 0) {
    ctx.log("train: skipped (label.count = 0)");
    return;
  }
  const LabeledDataset labels = load_labeled_dataset(ctx.file("labels.bin"));
  TrainConfig tc = cfg.train_config();
  tc.seed = ctx.stage_seed("train");
  const TrainResult result = train_amortized(labels, tc);
  StageFiles files(ctx);
  save_mlp(result.model, files.file("model.esdnet"), tc.seed,
           cfg.normalize ? "normalization.json" : "");
  save_loss_history(result.loss_history, files.file("loss_history.csv"));
  files.commit();
  ctx.log("train: final loss " + std::to_string(result.loss_history.back()));
}

void stage_infer(Context& ctx) {
  const ExperimentConfig& cfg = ctx.cfg;
  if (cfg.label_count == 0) {
    ctx.log("infer: skipped (label.count = 0)");
    return;
  }
  const MlpModel model = load_mlp(ctx.file("model.esdnet"));
  const PriorArtifacts art = load_prior_artifacts(ctx);
  const auto conds = conditioning_values(ctx);
  StageFiles files(ctx);
  for (const auto& cond : conds) {
    const Eigen::VectorXd y_n = art.stats.normalize_v(cond.y, art.prior.d_u);
    Eigen::MatrixXd u =
        mlp_sample(model, y_n, cfg.eval_nn_samples, ctx.stage_seed("infer." + cond.tag));
    u = art.stats.denormalize_u_rows(u);
    write_matrix_csv(u, files.file("samples_nn_" + cond.tag + ".csv"), "u");
  }
  files.commit();
  ctx.log("infer: " + std::to_string(cfg.eval_nn_samples) + " network draws per condition");
}

// ---------------------------------------------------------------------------
// evaluation helpers

struct BimodalReferences {
  DensityGrid exact, gmm, bgmm;
};

/// References and the KDE live on one shared raw-space grid; mixture
/// references built in normalized space are mapped through the affine
/// change of variables (mean/scale on means and variances).
BimodalReferences bimodal_references(const SphericalGmmPrior& prior,
                                     const NormalizationStats& stats, double sigma_y2,
                                     double y_raw, double sigma_true2, const GridSpec& grid) {
  Eigen::VectorXd y(1);
  y[0] = y_raw;
  const Eigen::VectorXd y_n = stats.normalize_v(y, prior.d_u);

  const double scale_u = stats.std[0];
  const double mean_u = stats.mean[0];

  // Bayesian posterior weights: conditioning with observation noise
  const double var_b = prior.sigma_v2 + sigma_y2;
  const Eigen::VectorXd sq =
      (prior.means_v().rowwise() - y_n.transpose()).rowwise().squaredNorm();
  Eigen::VectorXd log_wb =
      (prior.weights.array().log() - 0.5 * sq.array() / var_b).matrix();
  Eigen::VectorXd wb = (log_wb.array() - log_wb.maxCoeff()).exp().matrix();
  wb /= wb.sum();

  Mixture1d bgmm;
  bgmm.weights = wb;
  bgmm.means = (prior.means_u().col(0).array() * scale_u + mean_u).matrix();
  bgmm.variances =
      Eigen::VectorXd::Constant(prior.size(), prior.sigma_u2 * scale_u * scale_u);

  Mixture1d gmm = bgmm;
  gmm.weights = conditional_weights_given_v(prior, y_n);

  BimodalReferences refs;
  refs.bgmm = density_on_grid(bgmm, grid);
  refs.gmm = density_on_grid(gmm, grid);
  refs.exact = exact_bimodal_posterior(y_raw, sigma_true2, grid);
  return refs;
}

GridSpec bimodal_grid(const SphericalGmmPrior& prior, const NormalizationStats& stats,
                      const Eigen::VectorXd& samples, int n_points) {
  const double scale_u = stats.std[0];
  const double mean_u = stats.mean[0];
  const double sigma_raw = std::sqrt(prior.sigma_u2) * scale_u;
  const double lo_mix = prior.means_u().col(0).minCoeff() * scale_u + mean_u - 6 * sigma_raw;
  const double hi_mix = prior.means_u().col(0).maxCoeff() * scale_u + mean_u + 6 * sigma_raw;
  return make_kl_grid({std::min(lo_mix, -2.0), std::max(hi_mix, 2.0)}, samples, n_points);
}

struct BimodalRow {
  double e_exact, e_gmm, e_bgmm;
};

BimodalRow bimodal_kl_row(const Eigen::VectorXd& samples, const SphericalGmmPrior& prior,
                          const NormalizationStats& stats, double sigma_y2, double y_raw,
                          double sigma_true2, int grid_points, double bandwidth,
                          DensityGrid* kde_out = nullptr, BimodalReferences* refs_out = nullptr) {
  const GridSpec grid = bimodal_grid(prior, stats, samples, grid_points);
  const BimodalReferences refs =
      bimodal_references(prior, stats, sigma_y2, y_raw, sigma_true2, grid);
  const DensityGrid kde = kde_density(samples, grid, bandwidth);
  BimodalRow row{kl_riemann(refs.exact, kde), kl_riemann(refs.gmm, kde),
                 kl_riemann(refs.bgmm, kde)};
  if (kde_out) *kde_out = kde;
  if (refs_out) *refs_out = refs;
  return row;
}

void eval_bimodal(Context& ctx, StageFiles& files) {
  const ExperimentConfig& cfg = ctx.cfg;
  const PriorArtifacts art = load_prior_artifacts(ctx);
  const auto conds = conditioning_values(ctx);
  const auto& cond = conds.front();

  std::vector<KlReport> rows;
  const Eigen::MatrixXd dm = read_matrix_csv(ctx.file("samples_dm_" + cond.tag + ".csv"));
  DensityGrid kde;
  BimodalReferences refs;
  const BimodalRow dm_row =
      bimodal_kl_row(dm.col(0), art.prior, art.stats, art.sigma_y2, cfg.bimodal_y,
                     cfg.bimodal_sigma_true2, cfg.grid_points, cfg.kde_bandwidth, &kde, &refs);
  rows.push_back({"dm", art.prior.size(), art.prior.sigma_u2, art.sigma_y2,
                  1.0 / cfg.n_steps, dm_row.e_exact, dm_row.e_gmm, dm_row.e_bgmm});
  save_density_csv(kde, files.file("density_dm_kde.csv"));
  save_density_csv(refs.exact, files.file("density_exact.csv"));
  save_density_csv(refs.gmm, files.file("density_gmm.csv"));
  save_density_csv(refs.bgmm, files.file("density_bgmm.csv"));

  const fs::path nn_path = ctx.file("samples_nn_" + cond.tag + ".csv");
  if (fs::exists(nn_path)) {
    const Eigen::MatrixXd nn = read_matrix_csv(nn_path);
    DensityGrid nn_kde;
    const BimodalRow nn_row =
        bimodal_kl_row(nn.col(0), art.prior, art.stats, art.sigma_y2, cfg.bimodal_y,
                       cfg.bimodal_sigma_true2, cfg.grid_points, cfg.kde_bandwidth, &nn_kde);
    rows.push_back({"nn", art.prior.size(), art.prior.sigma_u2, art.sigma_y2,
                    1.0 / cfg.n_steps, nn_row.e_exact, nn_row.e_gmm, nn_row.e_bgmm});
    save_density_csv(nn_kde, files.file("density_nn_kde.csv"));
  }
  save_kl_reports(rows, files.file("kl_report.csv"));
  for (const auto& r : rows)
    ctx.log("eval[" + r.case_id + "]: e_exact=" + std::to_string(r.e_exact) +
            " e_gmm=" + std::to_string(r.e_gmm) + " e_bgmm=" + std::to_string(r.e_bgmm));
}

void eval_gmm20d(Context& ctx, StageFiles& files) {
  const ExperimentConfig& cfg = ctx.cfg;
  const auto conds = conditioning_values(ctx);
  const Eigen::VectorXd mu1 = gmm20_mu1();
  const Eigen::VectorXd mu2 = -mu1;
  const Eigen::VectorXd mu1_u = mu1.head(cfg.gmm_d_u);
  const Eigen::VectorXd mu2_u = mu2.head(cfg.gmm_d_u);
  const Eigen::VectorXd origin = 0.5 * (mu1_u + mu2_u);
  const Eigen::VectorXd dir = (mu1_u - mu2_u).normalized();

  std::ofstream summary_tmp;
  const fs::path summary_path = files.file("kl_20d.csv");
  std::ofstream summary(summary_path);
  summary << "tag,source,projection_kl,mean_perdim_kl\n";
  const fs::path detail_path = files.file("kl_20d_perdim.csv");
  std::ofstream detail(detail_path);
  detail << "tag,source,dim,kl\n";

  for (const auto& cond : conds) {
    const GaussianMixture ref = true_two_mode_conditional(mu1, mu2, cfg.gmm_d_u, cond.y);
    const Mixture1d proj_ref = project_mixture(ref, origin, dir);
    for (const std::string source : {"dm", "nn"}) {
      const fs::path path = ctx.file("samples_" + source + "_" + cond.tag + ".csv");
      if (!fs::exists(path)) continue;
      const Eigen::MatrixXd samples = read_matrix_csv(path);
      const PerDimensionKl pd =
          per_dimension_kl(samples, ref, cfg.grid_points, cfg.kde_bandwidth);
      const Eigen::VectorXd proj = project_onto_mode_line(samples, mu1_u, mu2_u);
      const GridSpec grid = make_kl_grid(proj_ref.envelope(), proj, cfg.grid_points);
      const double proj_kl = kl_riemann(density_on_grid(proj_ref, grid),
                                        kde_density(proj, grid, cfg.kde_bandwidth));
      summary << cond.tag << ',' << source << ',' << proj_kl << ',' << pd.mean << '\n';
      for (Eigen::Index d = 0; d < pd.per_dim.size(); ++d)
        detail << cond.tag << ',' << source << ',' << d << ',' << pd.per_dim[d] << '\n';
      ctx.log("eval[" + cond.tag + "," + source + "]: projection_kl=" + std::to_string(proj_kl) +
              " mean_perdim_kl=" + std::to_string(pd.mean));
    }
  }
}

void eval_elliptic(Context& ctx, StageFiles& files) {
  const ExperimentConfig& cfg = ctx.cfg;
  const PdeDataset data = load_pde_dataset(ctx.file("dataset.bin"));
  const auto cases = elliptic_test_cases(ctx, data);
  const auto prior_draws = sample_coefficients(data.m_count, data.l_count, cfg.pde_eval_samples,
                                               ctx.stage_seed("pde.prior_eval"));

  const fs::path summary_path = files.file("recovery_summary.csv");
  std::ofstream summary(summary_path);
  summary << "case,variant,median_perm_rel_mse,median_sol_rel_mse,iqr_perm_rel_mse,"
             "iqr_sol_rel_mse\n";
  const fs::path iqr_path = files.file("recovery_iqr.csv");
  std::ofstream iqr_csv(iqr_path);
  iqr_csv << "case,variant,location,iqr_signed_rel_err\n";

  const auto to_coeffs = [&](const Eigen::MatrixXd& rows) {
    std::vector<PermeabilityCoefficients> list;
    list.reserve(static_cast<std::size_t>(rows.rows()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
      list.push_back(
          PermeabilityCoefficients::from_flat(rows.row(r).transpose(), data.m_count,
                                              data.l_count));
    return list;
  };

  for (std::size_t i = 0; i < cases.size(); ++i) {
    const std::string case_id = "case" + std::to_string(i + 1);
    const auto emit = [&](const std::string& variant,
                          const std::vector<PermeabilityCoefficients>& coeffs) {
      const RecoveryReport report =
          recovery_metrics(cases[i].truth, coeffs, data.spec, data.grid_n, cfg.threads);
      save_recovery_report(report,
                           files.file("recovery_" + case_id + "_" + variant + ".json"));
      summary << case_id << ',' << variant << ',' << quantile(report.perm_rel_mse, 0.5) << ','
              << quantile(report.sol_rel_mse, 0.5) << ',' << iqr(report.perm_rel_mse) << ','
              << iqr(report.sol_rel_mse) << '\n';
      for (Eigen::Index loc = 0; loc < report.signed_rel_err.cols(); ++loc)
        iqr_csv << case_id << ',' << variant << ',' << loc << ','
                << iqr(report.signed_rel_err.col(loc)) << '\n';
    };

    emit("prior", prior_draws);
    emit("post", to_coeffs(read_matrix_csv(ctx.file("samples_dm_" + case_id + ".csv"))));
    emit("post_hisig",
         to_coeffs(read_matrix_csv(ctx.file("samples_dm_" + case_id + "_hisig.csv"))));
    const fs::path nn_path = ctx.file("samples_nn_" + case_id + ".csv");
    if (fs::exists(nn_path)) emit("post_nn", to_coeffs(read_matrix_csv(nn_path)));
    ctx.log("eval: recovery metrics for " + case_id);
  }
}

void eval_custom(Context& ctx, StageFiles& files) {
  const ExperimentConfig& cfg = ctx.cfg;
  const auto conds = conditioning_values(ctx);
  for (const auto& cond : conds) {
    for (const std::string source : {"dm", "nn"}) {
      const fs::path path = ctx.file("samples_" + source + "_" + cond.tag + ".csv");
      if (!fs::exists(path)) continue;
      const Eigen::MatrixXd samples = read_matrix_csv(path);
      for (Eigen::Index d = 0; d < samples.cols(); ++d) {
        const Eigen::VectorXd col = samples.col(d);
        const GridSpec grid =
            make_kl_grid({col.minCoeff(), col.maxCoeff()}, col, cfg.grid_points);
        save_density_csv(kde_density(col, grid, cfg.kde_bandwidth),
                         files.file("density_" + source + "_" + cond.tag + "_u" +
                                    std::to_string(d) + ".csv"));
      }
    }
  }
}

void stage_eval(Context& ctx) {
  StageFiles files(ctx);
  switch (ctx.cfg.experiment) {
    case ExperimentId::kBimodal: eval_bimodal(ctx, files); break;
    case ExperimentId::kGmm20d: eval_gmm20d(ctx, files); break;
    case ExperimentId::kElliptic: eval_elliptic(ctx, files); break;
    case ExperimentId::kCustom: eval_custom(ctx, files); break;
  }
  files.commit();
}

// ---------------------------------------------------------------------------

void write_manifest(Context& ctx) {
  json j;
  j["experiment"] = to_string(ctx.cfg.experiment);
  j["config"] = ctx.cfg.serialize();
  json seeds = json::object();
  for (const auto& [label, seed] : ctx.stage_seeds) seeds[label] = seed;
  j["stage_seeds"] = seeds;

  std::sort(ctx.outputs.begin(), ctx.outputs.end());
  ctx.outputs.erase(std::unique(ctx.outputs.begin(), ctx.outputs.end()), ctx.outputs.end());
  json outputs = json::array();
  for (const auto& path : ctx.outputs) {
    outputs.push_back({{"path", fs::relative(path, ctx.cfg.out).string()},
                       {"sha256", sha256_file(path)},
                       {"bytes", fs::file_size(path)}});
  }
  j["outputs"] = outputs;
  write_json_file(j, ctx.file("manifest.json"));
  ctx.log("manifest: " + std::to_string(ctx.outputs.size()) + " artifacts");
}

using StageFn = void (*)(Context&);

const std::map<std::string, StageFn>& stage_table() {
  static const std::map<std::string, StageFn> table = {
      {"gen-data", stage_gen_data}, {"prior", stage_prior}, {"sample", stage_sample},
      {"label", stage_label},       {"train", stage_train}, {"infer", stage_infer},
      {"eval", stage_eval}};
  return table;
}

}  // namespace

std::vector<std::string> pipeline_stages(const ExperimentConfig& cfg) {
  std::vector<std::string> stages = {"gen-data", "prior", "sample"};
  if (cfg.label_count > 0) {
    stages.push_back("label");
    stages.push_back("train");
    stages.push_back("infer");
  }
  stages.push_back("eval");
  return stages;
}

int run_pipeline(const ExperimentConfig& cfg, std::vector<std::string> stages, bool quiet) {
  cfg.validate();
  Context ctx{cfg, quiet, {}, {}};
  fs::create_directories(cfg.out);
  for (const auto& name : stages) {
    const auto it = stage_table().find(name);
    if (it == stage_table().end()) {
      std::cerr << "[esd] unknown stage '" << name << "'\n";
      return 2;
    }
    try {
      it->second(ctx);
    } catch (const std::exception& e) {
      std::cerr << "[esd] stage '" << name << "' failed: " << e.what() << "\n";
      return 1;
    }
  }
  try {
    write_manifest(ctx);
  } catch (const std::exception& e) {
    std::cerr << "[esd] manifest failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_full(const ExperimentConfig& cfg, bool quiet) {
  return run_pipeline(cfg, pipeline_stages(cfg), quiet);
}

int run_convergence(const ExperimentConfig& cfg, bool quiet) {
  if (cfg.experiment != ExperimentId::kBimodal) {
    std::cerr << "[esd] convergence sweep is defined for the bimodal experiment\n";
    return 2;
  }
  cfg.validate();
  Context ctx{cfg, quiet, {}, {}};
  fs::create_directories(cfg.out);
  try {
    stage_gen_data(ctx);
    stage_prior(ctx);
    const PriorArtifacts art = load_prior_artifacts(ctx);
    Eigen::VectorXd y(1);
    y[0] = cfg.bimodal_y;
    const Eigen::VectorXd y_n = art.stats.normalize_v(y, art.prior.d_u);
    const std::uint64_t sample_seed = ctx.stage_seed("sample.convergence");
    const ScoreOptions opts{cfg.truncate, 45.0};

    StageFiles files(ctx);
    const fs::path csv_path = files.file("convergence.csv");
    std::ofstream csv(csv_path);
    csv << "n_steps,e_bgmm\n";
    std::vector<double> log_n, log_e;
    for (const int n_steps : cfg.convergence_steps) {
      ReverseOdeConfig ode;
      ode.n_steps = n_steps;
      ode.batch = cfg.ode_batch;
      ode.seed = sample_seed;  // same initial draws across step counts
      Eigen::MatrixXd u = sample_posterior(y_n, cfg.eval_samples, art.prior, art.sigma_y2, ode,
                                           cfg.threads, nullptr, opts);
      u = art.stats.denormalize_u_rows(u);
      const BimodalRow row =
          bimodal_kl_row(u.col(0), art.prior, art.stats, art.sigma_y2, cfg.bimodal_y,
                         cfg.bimodal_sigma_true2, cfg.grid_points, cfg.kde_bandwidth);
      csv << n_steps << ',' << row.e_bgmm << '\n';
      log_n.push_back(std::log(static_cast<double>(n_steps)));
      log_e.push_back(std::log(std::max(row.e_bgmm, 1e-300)));
      ctx.log("convergence: n_steps=" + std::to_string(n_steps) +
              " e_bgmm=" + std::to_string(row.e_bgmm));
    }
    csv.close();
    files.commit();

    // least-squares slope of log e against log N
    const auto n = static_cast<double>(log_n.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
      sx += log_n[i];
      sy += log_e[i];
      sxx += log_n[i] * log_n[i];
      sxy += log_n[i] * log_e[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    ctx.log("convergence: log-log slope " + std::to_string(slope));
    write_manifest(ctx);
  } catch (const std::exception& e) {
    std::cerr << "[esd] convergence failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_ablation(const ExperimentConfig& cfg, bool quiet) {
  if (cfg.experiment != ExperimentId::kBimodal) {
    std::cerr << "[esd] the ablation table is defined for the bimodal experiment\n";
    return 2;
  }
  cfg.validate();
  Context ctx{cfg, quiet, {}, {}};
  fs::create_directories(cfg.out);

  struct Row {
    const char* id;
    Eigen::Index k;
    double sigma_u2;
    double sigma_y2;
  };
  const Row rows[] = {{"C1", 500, 0.005, 1e-4},  {"C2", 500, 0.01, 1e-4},
                      {"C3", 500, 0.05, 1e-4},   {"C4", 5000, 0.001, 1e-4},
                      {"C5", 5000, 0.005, 1e-4}, {"C6", 5000, 0.01, 1e-4},
                      {"C7", 5000, 0.005, 1e-3}, {"C8", 5000, 0.005, 1e-2},
                      {"C9", 5000, 0.005, 1e-1}};

  try {
    const std::uint64_t data_seed = ctx.stage_seed("data");
    const double sd = std::sqrt(cfg.bimodal_sigma_true2);
    std::map<Eigen::Index, JointDataset> datasets;
    const auto dataset_for = [&](Eigen::Index k) -> const JointDataset& {
      auto it = datasets.find(k);
      if (it != datasets.end()) return it->second;
      JointDataset data;
      data.u.resize(k, 1);
      data.v.resize(k, 1);
      for (Eigen::Index i = 0; i < k; ++i) {
        CounterRng rng(data_seed, static_cast<std::uint64_t>(i));
        const double u = -2.0 + 4.0 * rng.next_double();
        data.u(i, 0) = u;
        data.v(i, 0) = u * u + sd * rng.next_gaussian();
      }
      return datasets.emplace(k, std::move(data)).first->second;
    };

    std::vector<KlReport> reports;
    const ScoreOptions opts{cfg.truncate, 45.0};
    for (const Row& row : rows) {
      JointDataset data = dataset_for(row.k);
      NormalizationStats stats = identity_stats(1, 1);
      if (cfg.normalize) {
        auto [normalized, s] = zscore_normalize(data);
        stats = s;
        data = std::move(normalized);
      }
      const SphericalGmmPrior prior = build_spherical_prior(data, row.sigma_u2, row.sigma_u2);
      Eigen::VectorXd y(1);
      y[0] = cfg.bimodal_y;
      const Eigen::VectorXd y_n = stats.normalize_v(y, 1);

      ReverseOdeConfig ode;
      ode.n_steps = cfg.n_steps;
      ode.batch = cfg.ode_batch;
      ode.seed = ctx.stage_seed(std::string("ablation.") + row.id);
      Eigen::MatrixXd u = sample_posterior(y_n, cfg.eval_samples, prior, row.sigma_y2, ode,
                                           cfg.threads, nullptr, opts);
      u = stats.denormalize_u_rows(u);
      const BimodalRow kl =
          bimodal_kl_row(u.col(0), prior, stats, row.sigma_y2, cfg.bimodal_y,
                         cfg.bimodal_sigma_true2, cfg.grid_points, cfg.kde_bandwidth);
      reports.push_back({row.id, row.k, row.sigma_u2, row.sigma_y2, 1.0 / cfg.n_steps,
                         kl.e_exact, kl.e_gmm, kl.e_bgmm});
      ctx.log(std::string("ablation ") + row.id + ": e_exact=" + std::to_string(kl.e_exact) +
              " e_gmm=" + std::to_string(kl.e_gmm) + " e_bgmm=" + std::to_string(kl.e_bgmm));
    }
    StageFiles files(ctx);
    save_kl_reports(reports, files.file("ablation.csv"));
    files.commit();
    write_manifest(ctx);
  } catch (const std::exception& e) {
    std::cerr << "[esd] ablation failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace esd
