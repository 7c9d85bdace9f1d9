#include "esd/normalize.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace esd {

namespace {

void check_dims(const NormalizationStats& stats, Eigen::Index d_x) {
  if (stats.dim() != d_x)
    throw std::invalid_argument("NormalizationStats: dimension mismatch");
}

}  // namespace

JointDataset NormalizationStats::apply(const JointDataset& data) const {
  check_dims(*this, data.dim_x());
  const Eigen::Index du = data.dim_u();
  JointDataset out = data;
  out.u = (data.u.rowwise() - mean.head(du).transpose()).array().rowwise() /
          std.head(du).transpose().array();
  out.v = (data.v.rowwise() - mean.tail(data.dim_v()).transpose()).array().rowwise() /
          std.tail(data.dim_v()).transpose().array();
  return out;
}

JointDataset NormalizationStats::invert(const JointDataset& data) const {
  check_dims(*this, data.dim_x());
  const Eigen::Index du = data.dim_u();
  JointDataset out = data;
  out.u = (data.u.array().rowwise() * std.head(du).transpose().array()).matrix().rowwise() +
          mean.head(du).transpose();
  out.v = (data.v.array().rowwise() * std.tail(data.dim_v()).transpose().array()).matrix().rowwise() +
          mean.tail(data.dim_v()).transpose();
  return out;
}

Eigen::VectorXd NormalizationStats::normalize_v(const Eigen::VectorXd& y, Eigen::Index d_u) const {
  const Eigen::Index dv = dim() - d_u;
  if (y.size() != dv) throw std::invalid_argument("normalize_v: y dimension mismatch");
  return (y - mean.tail(dv)).cwiseQuotient(std.tail(dv));
}

Eigen::VectorXd NormalizationStats::denormalize_v(const Eigen::VectorXd& y, Eigen::Index d_u) const {
  const Eigen::Index dv = dim() - d_u;
  if (y.size() != dv) throw std::invalid_argument("denormalize_v: y dimension mismatch");
  return y.cwiseProduct(std.tail(dv)) + mean.tail(dv);
}

Eigen::MatrixXd NormalizationStats::normalize_u_rows(const Eigen::MatrixXd& rows) const {
  return ((rows.rowwise() - mean.head(rows.cols()).transpose()).array().rowwise() /
          std.head(rows.cols()).transpose().array())
      .matrix();
}

Eigen::MatrixXd NormalizationStats::denormalize_u_rows(const Eigen::MatrixXd& rows) const {
  return (rows.array().rowwise() * std.head(rows.cols()).transpose().array()).matrix().rowwise() +
         mean.head(rows.cols()).transpose();
}

std::pair<JointDataset, NormalizationStats> zscore_normalize(const JointDataset& data) {
  data.validate();
  if (data.size() < 2)
    throw std::invalid_argument("zscore_normalize: need K >= 2 samples");

  const Eigen::MatrixXd x = data.joint();
  NormalizationStats stats;
  stats.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - stats.mean.transpose();
  stats.std =
      (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();

  for (Eigen::Index j = 0; j < stats.std.size(); ++j) {
    if (!(stats.std[j] > 0.0))
      throw std::invalid_argument("zscore_normalize: column " + std::to_string(j) +
                                  " has zero sample standard deviation");
  }
  return {stats.apply(data), stats};
}

NormalizationStats identity_stats(Eigen::Index d_u, Eigen::Index d_v) {
  NormalizationStats stats;
  stats.mean = Eigen::VectorXd::Zero(d_u + d_v);
  stats.std = Eigen::VectorXd::Ones(d_u + d_v);
  return stats;
}

}  // namespace esd
