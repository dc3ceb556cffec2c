#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace gpllm {

using Rng = std::mt19937_64;

/// Independent stream derived from a base seed; replicate `stream` of an
/// experiment always sees the same sequence regardless of worker scheduling.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
  return Rng(seq);
}

inline double draw_uniform(Rng &rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double draw_normal(Rng &rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline std::size_t draw_index(std::size_t count, Rng &rng) {
  if (count == 0) throw std::invalid_argument("draw_index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
}

/// Gamma with shape-rate parameterization (mean shape / rate).
inline double draw_gamma(double shape, double rate, Rng &rng) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

/// Inverse-gamma IG(shape, scale), density proportional to x^{-shape-1} e^{-scale/x}.
inline double draw_inverse_gamma(double shape, double scale, Rng &rng) {
  return 1.0 / draw_gamma(shape, scale, rng);
}

inline double log_inverse_gamma_pdf(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - scale / x;
}

inline Eigen::VectorXd draw_standard_normal(Eigen::Index size, Rng &rng) {
  Eigen::VectorXd z(size);
  for (Eigen::Index i = 0; i < size; ++i) z(i) = draw_normal(rng);
  return z;
}

/// mean + L z where L is a lower Cholesky factor of the covariance.
inline Eigen::VectorXd draw_mvn(const Eigen::VectorXd &mean,
                                const Eigen::MatrixXd &chol_lower, Rng &rng) {
  return mean + chol_lower * draw_standard_normal(mean.size(), rng);
}

/// Wishart(dof, scale) draw by the Bartlett decomposition; E[draw] = dof * scale.
inline Eigen::MatrixXd draw_wishart(double dof, const Eigen::MatrixXd &scale,
                                    Rng &rng) {
  const Eigen::Index p = scale.rows();
  if (dof <= static_cast<double>(p) - 1.0)
    throw std::invalid_argument("draw_wishart: dof must exceed dimension - 1");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("draw_wishart: scale is not positive definite");
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    A(i, i) = std::sqrt(2.0 * draw_gamma(0.5 * (dof - static_cast<double>(i)), 1.0, rng));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = draw_normal(rng);
  }
  const Eigen::MatrixXd LA = llt.matrixL() * A;
  return LA * LA.transpose();
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

} // namespace gpllm
