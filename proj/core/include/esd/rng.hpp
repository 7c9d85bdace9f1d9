#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string_view>

namespace esd {

/// Counter-based pseudo-random generator (SplitMix64 output function over a
/// keyed counter). Every draw is a pure function of (key, counter), so
/// independent streams never share state and parallel runs reproduce serial
/// ones bitwise. Not cryptographic.
class CounterRng {
 public:
  /// Stream `stream` of the generator family identified by `seed`.
  /// Distinct (seed, stream) pairs give statistically independent sequences.
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  /// Uniform on [0, 1) with 53 random bits.
  double next_double();

  /// Standard normal via Box-Muller; draws are consumed in pairs.
  double next_gaussian();

  Eigen::VectorXd gaussian_vector(Eigen::Index n);
  Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols);

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stable 64-bit mix used for seed derivation.
std::uint64_t mix64(std::uint64_t x);

/// Deterministically derives a child seed for a named stage ("sample",
/// "label", ...) from a master seed. Used to split one top-level seed
/// across pipeline stages.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace esd
