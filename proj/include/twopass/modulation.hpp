#pragma once

// Output error, the fixed random feedback projection and the modulated input
// that drives the second forward pass.

#include <cmath>
#include <cstdint>
#include <random>

#include "twopass/core.hpp"

namespace twopass {

inline constexpr double kProjectionGain = 0.05;

/// Standard deviation of the projection entries for a given fan-in.
inline double projection_sigma(Eigen::Index input_dim, double gain = kProjectionGain) {
  return gain * std::sqrt(6.0 / static_cast<double>(input_dim));
}

/// Fixed Gaussian matrix (input_dim x output_dim) mapping output error into
/// input space. Never resampled once built.
template <typename Scalar>
struct ProjectionMatrix {
  Matrix<Scalar> matrix;
  std::uint64_t seed = 0;
  double sigma = 0.0;

  Eigen::Index input_dim() const { return matrix.rows(); }
  Eigen::Index output_dim() const { return matrix.cols(); }
};

template <typename Scalar = double>
ProjectionMatrix<Scalar> sample_projection(Eigen::Index input_dim, Eigen::Index output_dim,
                                           std::uint64_t seed, double gain = kProjectionGain) {
  if (input_dim < 1 || output_dim < 1) throw ShapeError("projection dimensions must be positive");
  ProjectionMatrix<Scalar> f;
  f.seed = seed;
  f.sigma = projection_sigma(input_dim, gain);
  f.matrix.resize(input_dim, output_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, f.sigma);
  for (Eigen::Index i = 0; i < f.matrix.size(); ++i) f.matrix.data()[i] = static_cast<Scalar>(dist(rng));
  return f;
}

/// Gamma = x_L - target, one column per sample.
template <typename Scalar>
struct OutputError {
  Batch<Scalar> gamma;

  /// Mean of gamma^2 over every output and sample.
  Scalar mse() const { return gamma.squaredNorm() / static_cast<Scalar>(gamma.size()); }
};

template <typename DerivedX, typename DerivedT>
OutputError<typename DerivedX::Scalar> output_error(const Eigen::MatrixBase<DerivedX>& x_out,
                                                    const Eigen::MatrixBase<DerivedT>& target) {
  if (x_out.rows() != target.rows() || x_out.cols() != target.cols())
    throw ShapeError("output_error: output is " + std::to_string(x_out.rows()) + "x" +
                     std::to_string(x_out.cols()) + ", target is " + std::to_string(target.rows()) + "x" +
                     std::to_string(target.cols()));
  return {x_out - target};
}

/// x0 + F * gamma.
template <typename Scalar, typename Derived>
Batch<Scalar> modulate_input(const Eigen::MatrixBase<Derived>& x0, const ProjectionMatrix<Scalar>& f,
                             const OutputError<Scalar>& err) {
  if (f.input_dim() != x0.rows() || f.output_dim() != err.gamma.rows() || x0.cols() != err.gamma.cols())
    throw ShapeError("modulate_input: projection is " + std::to_string(f.input_dim()) + "x" +
                     std::to_string(f.output_dim()) + ", input has " + std::to_string(x0.rows()) +
                     " rows, error has " + std::to_string(err.gamma.rows()));
  return x0 + f.matrix * err.gamma;
}

}  // namespace twopass
