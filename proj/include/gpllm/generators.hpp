#pragma once

// Synthetic benchmark data: noisy line, 2-d exponential surface on a grid,
// and the first Friedman function.

#include "gpllm/dataset.hpp"
#include "gpllm/random.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace gpllm {

struct Synthetic {
  Dataset data;
  Eigen::VectorXd truth;            // noiseless mean at the training inputs
  Eigen::MatrixXd holdout_X;        // raw units; empty when not applicable
  Eigen::VectorXd holdout_truth;
};

/// y = 1 + 2x + N(0, noise_sd^2) at n evenly spaced x in [0, 1].
inline Synthetic gen_linear(int n, std::uint64_t seed, double noise_sd = 1.0) {
  if (n < 2) throw std::invalid_argument("gen_linear: n must be >= 2");
  Rng rng = make_stream(seed, 101);
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd mu(n), y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = static_cast<double>(i) / static_cast<double>(n - 1);
    mu(i) = 1.0 + 2.0 * X(i, 0);
    y(i) = mu(i) + (noise_sd > 0.0 ? noise_sd * draw_normal(rng) : 0.0);
  }
  DatasetOptions opt;
  opt.bounds = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
  opt.names = {"x"};
  return {make_dataset(X, y, opt), mu, {}, {}};
}

inline double exp2d_mean(double x1, double x2) {
  return x1 * std::exp(-x1 * x1 - x2 * x2);
}

/// Random n-point subsample of the 21 x 21 grid on [-2, 6]^2; the remaining
/// grid points are returned as a noiseless holdout.
inline Synthetic gen_exp2d(int n, std::uint64_t seed, double noise_sd = 0.001) {
  constexpr int side = 21;
  constexpr int total = side * side;
  if (n < 1 || n > total) throw std::invalid_argument("gen_exp2d: n must be in [1, 441]");
  Rng rng = make_stream(seed, 102);
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto grid_point = [](int k) {
    const double step = 8.0 / (side - 1);
    return Eigen::Vector2d(-2.0 + step * (k / side), -2.0 + step * (k % side));
  };
  Eigen::MatrixXd X(n, 2), H(total - n, 2);
  Eigen::VectorXd mu(n), y(n), hmu(total - n);
  for (int i = 0; i < total; ++i) {
    const Eigen::Vector2d x = grid_point(idx[static_cast<std::size_t>(i)]);
    if (i < n) {
      X.row(i) = x.transpose();
      mu(i) = exp2d_mean(x(0), x(1));
      y(i) = mu(i) + noise_sd * draw_normal(rng);
    } else {
      H.row(i - n) = x.transpose();
      hmu(i - n) = exp2d_mean(x(0), x(1));
    }
  }
  DatasetOptions opt;
  opt.bounds = {Eigen::Vector2d::Constant(-2.0), Eigen::Vector2d::Constant(6.0)};
  opt.names = {"x1", "x2"};
  return {make_dataset(X, y, opt), mu, H, hmu};
}

inline double friedman_mean(const Eigen::Ref<const Eigen::VectorXd> &x) {
  return 10.0 * std::sin(std::numbers::pi * x(0) * x(1)) +
         20.0 * (x(2) - 0.5) * (x(2) - 0.5) + 10.0 * x(3) + 5.0 * x(4);
}

/// Ten uniform covariates on [0, 1]; only the first five matter.
inline Synthetic gen_friedman(int n, std::uint64_t seed, double noise_sd = 1.0) {
  if (n < 1) throw std::invalid_argument("gen_friedman: n must be >= 1");
  constexpr int dims = 10;
  Rng rng = make_stream(seed, 103);
  Eigen::MatrixXd X(n, dims);
  Eigen::VectorXd mu(n), y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dims; ++j) X(i, j) = draw_uniform(rng);
    mu(i) = friedman_mean(X.row(i).transpose());
    y(i) = mu(i) + noise_sd * draw_normal(rng);
  }
  DatasetOptions opt;
  opt.bounds = {Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Ones(dims)};
  for (int j = 0; j < dims; ++j) opt.names.push_back("x" + std::to_string(j + 1));
  return {make_dataset(X, y, opt), mu, {}, {}};
}

} // namespace gpllm
