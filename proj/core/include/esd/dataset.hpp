#pragma once

#include <Eigen/Core>
#include <filesystem>

namespace esd {

/// Paired joint samples (u_k, v_k), k = 1..K. Rows of `u` and `v` align.
struct JointDataset {
  Eigen::MatrixXd u;  // K x d_u
  Eigen::MatrixXd v;  // K x d_v

  Eigen::Index size() const { return u.rows(); }
  Eigen::Index dim_u() const { return u.cols(); }
  Eigen::Index dim_v() const { return v.cols(); }
  Eigen::Index dim_x() const { return u.cols() + v.cols(); }

  /// Row k as the concatenated vector x_k = (u_k, v_k).
  Eigen::VectorXd joint_row(Eigen::Index k) const;

  /// All rows concatenated into a K x (d_u + d_v) matrix.
  Eigen::MatrixXd joint() const;

  /// Throws std::invalid_argument on row-count mismatch, K < 1, or
  /// non-finite entries.
  void validate() const;
};

enum class DatasetFormat { kCsv, kBinary, kAuto };

/// Reads a dataset from the documented CSV schema (header line
/// `# du=<int> dv=<int>`, then comma-separated rows) or the binary schema
/// (16-byte header: magic, K, d_u, d_v as little-endian 32-bit integers,
/// then row-major little-endian doubles). kAuto picks by file magic.
JointDataset load_joint_dataset(const std::filesystem::path& path,
                                DatasetFormat format = DatasetFormat::kAuto);

void save_joint_dataset(const JointDataset& data, const std::filesystem::path& path,
                        DatasetFormat format);

}  // namespace esd
