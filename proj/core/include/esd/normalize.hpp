#pragma once

#include <Eigen/Core>

#include "esd/dataset.hpp"

namespace esd {

/// Per-column z-score statistics over the joint (u, v) layout, u columns
/// first. Variance uses the population convention (1/K), so reference values
/// computed by hand on tiny datasets are reproducible.
struct NormalizationStats {
  Eigen::VectorXd mean;  // length d_u + d_v
  Eigen::VectorXd std;   // length d_u + d_v, strictly positive

  Eigen::Index dim() const { return mean.size(); }

  JointDataset apply(const JointDataset& data) const;
  JointDataset invert(const JointDataset& data) const;

  /// Maps a conditioning value y (living in v-space) into normalized
  /// coordinates, given the u/v split.
  Eigen::VectorXd normalize_v(const Eigen::VectorXd& y, Eigen::Index d_u) const;
  Eigen::VectorXd denormalize_v(const Eigen::VectorXd& y, Eigen::Index d_u) const;

  Eigen::MatrixXd normalize_u_rows(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd denormalize_u_rows(const Eigen::MatrixXd& rows) const;
};

/// Centers and scales every column to mean 0, std 1 (population convention).
/// Requires K >= 2. Throws std::invalid_argument naming the first degenerate
/// (constant) column.
std::pair<JointDataset, NormalizationStats> zscore_normalize(const JointDataset& data);

/// Identity stats (mean 0, std 1) for pipelines that skip normalization.
NormalizationStats identity_stats(Eigen::Index d_u, Eigen::Index d_v);

}  // namespace esd
