#include "esd/score.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>
#include <string>

namespace esd {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_gaussian(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                    const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const Eigen::VectorXd diff = x - mean;
  const double log_det =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (x.size() * kLog2Pi + log_det + diff.dot(llt.solve(diff)));
}

void softmax_into(const Eigen::VectorXd& log_w, Eigen::VectorXd& out) {
  const double m = log_w.maxCoeff();
  if (!std::isfinite(m))
    throw std::runtime_error("component weights: all log-weights are non-finite");
  out = (log_w.array() - m).exp();
  out /= out.sum();
}

struct SphericalWorkspace {
  double alpha, beta2, cu, cv, den;
  SphericalScalars s;
};

SphericalWorkspace spherical_workspace(double t, const SphericalGmmPrior& prior,
                                       double sigma_y2) {
  if (!(t >= 0.0) || t >= 1.0)
    throw std::domain_error("spherical score: t must lie in [0, 1)");
  if (!(sigma_y2 > 0.0))
    throw std::invalid_argument("spherical score: sigma_y2 must be positive");
  SphericalWorkspace w;
  w.alpha = 1.0 - t;
  w.beta2 = t;
  w.s = spherical_scalars(t, prior.sigma_u2, prior.sigma_v2);
  w.cu = w.beta2 + w.alpha * w.alpha * prior.sigma_u2;
  w.cv = w.beta2 + w.alpha * w.alpha * prior.sigma_v2;
  w.den = sigma_y2 + w.s.s3v;
  return w;
}

Eigen::VectorXd spherical_log_weights(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                      const SphericalGmmPrior& prior,
                                      const SphericalWorkspace& w) {
  if (z_t.size() != prior.dim_x())
    throw std::invalid_argument("spherical score: z_t dimension mismatch");
  if (y.size() != prior.d_v)
    throw std::invalid_argument("spherical score: y dimension mismatch");
  if (!z_t.allFinite() || !y.allFinite())
    throw std::domain_error("spherical score: non-finite input");

  const auto u_means = prior.means_u();
  const auto v_means = prior.means_v();
  const Eigen::VectorXd zu = z_t.head(prior.d_u);
  const Eigen::VectorXd zv = z_t.tail(prior.d_v);
  const Eigen::VectorXd a = w.s.s2v * zv - y;  // mu_v(z) = s1v v_k + s2v zv

  Eigen::VectorXd qu = w.alpha * w.alpha * u_means.rowwise().squaredNorm();
  qu.noalias() -= 2.0 * w.alpha * (u_means * zu);
  qu.array() += zu.squaredNorm();

  Eigen::VectorXd qv = w.alpha * w.alpha * v_means.rowwise().squaredNorm();
  qv.noalias() -= 2.0 * w.alpha * (v_means * zv);
  qv.array() += zv.squaredNorm();

  Eigen::VectorXd qm = w.s.s1v * w.s.s1v * v_means.rowwise().squaredNorm();
  qm.noalias() += 2.0 * w.s.s1v * (v_means * a);
  qm.array() += a.squaredNorm();

  return prior.weights.array().log() -
         0.5 * (qu.array() / w.cu + qv.array() / w.cv + qm.array() / w.den);
}

}  // namespace

ComponentWeights component_weights_spherical(const Eigen::VectorXd& z_t,
                                             const Eigen::VectorXd& y, double t,
                                             const SphericalGmmPrior& prior, double sigma_y2) {
  const SphericalWorkspace w = spherical_workspace(t, prior, sigma_y2);
  ComponentWeights cw;
  cw.log_weights = spherical_log_weights(z_t, y, prior, w);
  softmax_into(cw.log_weights, cw.weights);
  return cw;
}

Eigen::VectorXd exact_score_spherical(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                      double t, const SphericalGmmPrior& prior, double sigma_y2,
                                      const ScoreOptions& opts) {
  const SphericalWorkspace w = spherical_workspace(t, prior, sigma_y2);
  const Eigen::VectorXd log_w = spherical_log_weights(z_t, y, prior, w);

  Eigen::VectorXd weights = (log_w.array() - log_w.maxCoeff()).exp();
  if (opts.truncate_components) {
    const double floor = std::exp(-opts.log_weight_cutoff);
    weights = (weights.array() < floor).select(0.0, weights);
  }
  weights /= weights.sum();

  const Eigen::VectorXd zu = z_t.head(prior.d_u);
  const Eigen::VectorXd zv = z_t.tail(prior.d_v);
  const Eigen::VectorXd u_bar = prior.means_u().transpose() * weights;
  const Eigen::VectorXd v_bar = prior.means_v().transpose() * weights;

  Eigen::VectorXd score(prior.dim_x());
  score.head(prior.d_u) = -(zu - w.alpha * u_bar) / w.cu;
  score.tail(prior.d_v) = -(zv - w.alpha * v_bar) / w.cv -
                          (w.s.s2v / w.den) * (w.s.s1v * v_bar + w.s.s2v * zv - y);
  return score;
}

namespace {

struct DenseWorkspace {
  double alpha, beta2;
  Eigen::MatrixXd ht_syinv_h;   // H^T Sy^-1 H
  Eigen::VectorXd ht_syinv_y;   // H^T Sy^-1 y
  Eigen::LLT<Eigen::MatrixXd> llt_sy;
};

DenseWorkspace dense_workspace(const Eigen::VectorXd& y, double t, const DenseGmmPrior& prior,
                               const ObservationModel& obs) {
  if (!(t > 0.0) || t >= 1.0)
    throw std::domain_error("dense score: t must lie in (0, 1)");
  if (obs.dim_x() != prior.dim())
    throw std::invalid_argument("dense score: H width != prior dimension");
  if (y.size() != obs.dim_y())
    throw std::invalid_argument("dense score: y dimension mismatch");
  DenseWorkspace w;
  w.alpha = 1.0 - t;
  w.beta2 = t;
  w.llt_sy.compute(obs.sigma_y);
  if (w.llt_sy.info() != Eigen::Success)
    throw std::runtime_error("dense score: Sigma_Y is not positive definite");
  w.ht_syinv_h = obs.h.transpose() * w.llt_sy.solve(obs.h);
  w.ht_syinv_y = obs.h.transpose() * w.llt_sy.solve(y);
  return w;
}

struct DenseComponent {
  double log_weight;            // unnormalized
  Eigen::VectorXd contribution; // prior score + J * likelihood score
};

DenseComponent eval_dense_component(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                    const DenseGmmPrior& prior, const ObservationModel& obs,
                                    const DenseWorkspace& w, Eigen::Index k) {
  const Eigen::Index d = prior.dim();
  const Eigen::MatrixXd& cov = prior.covariances[static_cast<std::size_t>(k)];
  const Eigen::VectorXd mean = prior.means.row(k).transpose();
  const double a = w.alpha, a2 = w.alpha * w.alpha;

  const Eigen::MatrixXd fwd_cov =
      w.beta2 * Eigen::MatrixXd::Identity(d, d) + a2 * cov;
  const Eigen::LLT<Eigen::MatrixXd> llt_fwd(fwd_cov);
  if (llt_fwd.info() != Eigen::Success)
    throw std::runtime_error("dense score: singular forward covariance at component " +
                             std::to_string(k));

  const Eigen::VectorXd resid = z_t - a * mean;
  const Eigen::VectorXd fwd_sol = llt_fwd.solve(resid);
  const Eigen::VectorXd prior_score = -fwd_sol;

  const Eigen::MatrixXd fwd_inv_cov = llt_fwd.solve(cov);  // M^-1 Sigma_k
  const Eigen::VectorXd mu_0t = mean + a * (cov * fwd_sol);
  Eigen::MatrixXd cov_0t = cov - a2 * cov * fwd_inv_cov;
  cov_0t = 0.5 * (cov_0t + cov_0t.transpose());
  // J = a Sigma_k M^-1 = a (M^-1 Sigma_k)^T
  const Eigen::MatrixXd jac = a * fwd_inv_cov.transpose();

  const Eigen::LLT<Eigen::MatrixXd> llt_0t(cov_0t);
  if (llt_0t.info() != Eigen::Success)
    throw std::runtime_error("dense score: singular reverse-kernel covariance at component " +
                             std::to_string(k));

  const Eigen::MatrixXd cross = cov_0t * obs.h.transpose();
  const Eigen::MatrixXd innov = obs.h * cross + obs.sigma_y;
  const Eigen::LLT<Eigen::MatrixXd> llt_innov(innov);
  if (llt_innov.info() != Eigen::Success)
    throw std::runtime_error("dense score: singular innovation covariance at component " +
                             std::to_string(k));
  const Eigen::VectorXd h_resid = obs.h * mu_0t - y;
  const Eigen::VectorXd lik_score = -obs.h.transpose() * llt_innov.solve(h_resid);

  // Weight: pi_k phi(z; a mu_k, M) |cov_0t|^{-1/2} |Sigma_hat|^{1/2}
  //         exp(-[mu' cov_0t^-1 mu - m' Sigma_hat m] / 2)
  const Eigen::VectorXd cov0t_inv_mu = llt_0t.solve(mu_0t);
  const Eigen::MatrixXd aux =
      w.ht_syinv_h + llt_0t.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::LLT<Eigen::MatrixXd> llt_aux(aux);
  if (llt_aux.info() != Eigen::Success)
    throw std::runtime_error("dense score: singular weight auxiliary at component " +
                             std::to_string(k));
  const Eigen::VectorXd m = w.ht_syinv_y + cov0t_inv_mu;
  const double quad = mu_0t.dot(cov0t_inv_mu) - m.dot(llt_aux.solve(m));
  const double log_det_0t =
      2.0 * llt_0t.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double log_det_aux =
      2.0 * llt_aux.matrixL().toDenseMatrix().diagonal().array().log().sum();

  DenseComponent out;
  out.log_weight = std::log(prior.weights[k]) + log_gaussian(z_t, a * mean, llt_fwd) -
                   0.5 * log_det_0t - 0.5 * log_det_aux - 0.5 * quad;
  out.contribution = prior_score + jac * lik_score;
  return out;
}

}  // namespace

ReverseKernelParams reverse_kernel_params(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                          double t, const DenseGmmPrior& prior,
                                          const ObservationModel& obs, Eigen::Index k) {
  const DenseWorkspace w = dense_workspace(y, t, prior, obs);
  const Eigen::Index d = prior.dim();
  const Eigen::MatrixXd& cov = prior.covariances[static_cast<std::size_t>(k)];
  const Eigen::VectorXd mean = prior.means.row(k).transpose();
  const double a = w.alpha, a2 = a * a;

  const Eigen::MatrixXd fwd_cov = w.beta2 * Eigen::MatrixXd::Identity(d, d) + a2 * cov;
  const Eigen::LLT<Eigen::MatrixXd> llt_fwd(fwd_cov);
  const Eigen::MatrixXd fwd_inv_cov = llt_fwd.solve(cov);

  ReverseKernelParams p;
  p.mu_0t = mean + a * (cov * llt_fwd.solve(z_t - a * mean));
  Eigen::MatrixXd cov_0t = cov - a2 * cov * fwd_inv_cov;
  p.cov_0t = 0.5 * (cov_0t + cov_0t.transpose());
  p.jacobian = a * fwd_inv_cov.transpose();

  const Eigen::LLT<Eigen::MatrixXd> llt_0t(p.cov_0t);
  if (llt_0t.info() != Eigen::Success)
    throw std::runtime_error("reverse_kernel_params: singular covariance at component " +
                             std::to_string(k));
  p.chol = llt_0t.matrixL();

  const Eigen::MatrixXd cross = p.cov_0t * obs.h.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt_innov(obs.h * cross + obs.sigma_y);
  p.kalman_mean = p.mu_0t + cross * llt_innov.solve(y - obs.h * p.mu_0t);

  const Eigen::MatrixXd aux = w.ht_syinv_h + llt_0t.solve(Eigen::MatrixXd::Identity(d, d));
  const Eigen::LLT<Eigen::MatrixXd> llt_aux(aux);
  p.weight_aux_cov = llt_aux.solve(Eigen::MatrixXd::Identity(d, d));
  p.weight_aux_mean = w.ht_syinv_y + llt_0t.solve(p.mu_0t);
  return p;
}

ComponentWeights component_weights_general(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                           double t, const DenseGmmPrior& prior,
                                           const ObservationModel& obs) {
  const DenseWorkspace w = dense_workspace(y, t, prior, obs);
  ComponentWeights cw;
  cw.log_weights.resize(prior.size());
  for (Eigen::Index k = 0; k < prior.size(); ++k)
    cw.log_weights[k] = eval_dense_component(z_t, y, prior, obs, w, k).log_weight;
  softmax_into(cw.log_weights, cw.weights);
  return cw;
}

Eigen::VectorXd exact_score_general(const Eigen::VectorXd& z_t, const Eigen::VectorXd& y,
                                    double t, const DenseGmmPrior& prior,
                                    const ObservationModel& obs) {
  if (!z_t.allFinite() || !y.allFinite())
    throw std::domain_error("dense score: non-finite input");
  const DenseWorkspace w = dense_workspace(y, t, prior, obs);

  Eigen::VectorXd log_w(prior.size());
  Eigen::MatrixXd contributions(prior.size(), prior.dim());
  for (Eigen::Index k = 0; k < prior.size(); ++k) {
    const DenseComponent c = eval_dense_component(z_t, y, prior, obs, w, k);
    log_w[k] = c.log_weight;
    contributions.row(k) = c.contribution.transpose();
  }
  Eigen::VectorXd weights;
  softmax_into(log_w, weights);
  return contributions.transpose() * weights;
}

SphericalScoreBatch::SphericalScoreBatch(const SphericalGmmPrior& prior, double sigma_y2,
                                         ScoreOptions opts)
    : d_u_(prior.d_u), d_v_(prior.d_v), opts_(opts) {
  prior.validate();
  if (!(sigma_y2 > 0.0))
    throw std::invalid_argument("SphericalScoreBatch: sigma_y2 must be positive");
  means_u_ = prior.means_u();
  means_v_ = prior.means_v();
  u_norm2_ = means_u_.rowwise().squaredNorm();
  v_norm2_ = means_v_.rowwise().squaredNorm();
  log_pi_ = prior.weights.array().log();
  sigma_u2_ = prior.sigma_u2;
  sigma_v2_ = prior.sigma_v2;
  sigma_y2_ = sigma_y2;
}

void SphericalScoreBatch::evaluate(const Eigen::MatrixXd& states, const Eigen::MatrixXd& ys,
                                   double t, Eigen::MatrixXd& out) {
  if (!(t >= 0.0) || t >= 1.0)
    throw std::domain_error("SphericalScoreBatch: t must lie in [0, 1)");
  const Eigen::Index b = states.rows();
  if (states.cols() != dim_x() || ys.rows() != b || ys.cols() != d_v_)
    throw std::invalid_argument("SphericalScoreBatch: shape mismatch");

  const double alpha = 1.0 - t;
  const double beta2 = t;
  const SphericalScalars s = spherical_scalars(t, sigma_u2_, sigma_v2_);
  const double cu = beta2 + alpha * alpha * sigma_u2_;
  const double cv = beta2 + alpha * alpha * sigma_v2_;
  const double den = sigma_y2_ + s.s3v;

  const auto zu = states.leftCols(d_u_);
  const auto zv = states.rightCols(d_v_);
  aux_ = s.s2v * zv - ys;  // B x d_v

  // log-weights, separable part via three rank-d products
  logw_.resize(b, means_u_.rows());
  logw_.noalias() = zu * (means_u_.transpose() * (alpha / cu));
  logw_.noalias() += zv * (means_v_.transpose() * (alpha / cv));
  logw_.noalias() -= aux_ * (means_v_.transpose() * (s.s1v / den));
  const Eigen::VectorXd col_const =
      log_pi_.array() - 0.5 * (alpha * alpha * (u_norm2_.array() / cu + v_norm2_.array() / cv) +
                               s.s1v * s.s1v * v_norm2_.array() / den);
  logw_.rowwise() += col_const.transpose();
  // z-dependent constants are shared within a row and cancel in the softmax

  row_max_ = logw_.rowwise().maxCoeff();
  logw_.colwise() -= row_max_;
  if (opts_.truncate_components) {
    logw_ = (logw_.array() < -opts_.log_weight_cutoff)
                .select(-std::numeric_limits<double>::infinity(), logw_);
  }
  logw_ = logw_.array().exp();
  row_sum_ = logw_.rowwise().sum();
  if (!(row_sum_.array() > 0.0).all())
    throw std::runtime_error("SphericalScoreBatch: vanishing responsibility row");
  logw_.array().colwise() /= row_sum_.array();

  mean_u_.noalias() = logw_ * means_u_;  // B x d_u
  mean_v_.noalias() = logw_ * means_v_;  // B x d_v

  out.resize(b, dim_x());
  out.leftCols(d_u_) = -(zu - alpha * mean_u_) / cu;
  out.rightCols(d_v_) =
      -(zv - alpha * mean_v_) / cv - (s.s2v / den) * (s.s1v * mean_v_ + s.s2v * zv - ys);
}

}  // namespace esd
