#pragma once

// Raw and unit-cube-scaled inputs, per-dimension affine maps, and the
// optional response standardization.

#include "gpllm/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpllm {

/// x -> (x - lo) / (hi - lo). A constant column maps every value to 0.5.
struct ScaleMap {
  double lo = 0.0;
  double hi = 1.0;

  bool constant() const { return !(hi > lo); }
  double scale(double x) const { return constant() ? 0.5 : (x - lo) / (hi - lo); }
  double unscale(double s) const { return constant() ? lo : lo + s * (hi - lo); }
};

struct ResponseMap {
  double center = 0.0;
  double spread = 1.0;
  double scale(double y) const { return (y - center) / spread; }
  double unscale(double s) const { return center + s * spread; }
  /// Variances and coefficients pick up spread (or its square).
  double unscale_variance(double v) const { return v * spread * spread; }
};

struct Dataset {
  Eigen::MatrixXd X_raw;
  Eigen::MatrixXd X_scaled;
  Eigen::VectorXd y_raw;
  Eigen::VectorXd y;             // response as modelled (possibly standardized)
  std::vector<ScaleMap> maps;
  ResponseMap response;
  std::vector<std::string> names;
  std::vector<std::string> warnings;

  Eigen::Index n() const { return X_raw.rows(); }
  Eigen::Index input_dims() const { return X_raw.cols(); }

  RegressionData regression() const { return RegressionData(X_scaled, y); }

  Eigen::MatrixXd scale_inputs(const Eigen::MatrixXd &raw) const {
    if (raw.cols() != input_dims())
      throw std::invalid_argument("scale_inputs: column count mismatch");
    Eigen::MatrixXd out(raw.rows(), raw.cols());
    for (Eigen::Index j = 0; j < raw.cols(); ++j)
      for (Eigen::Index i = 0; i < raw.rows(); ++i)
        out(i, j) = maps[static_cast<std::size_t>(j)].scale(raw(i, j));
    return out;
  }

  Eigen::MatrixXd unscale_inputs(const Eigen::MatrixXd &scaled) const {
    if (scaled.cols() != input_dims())
      throw std::invalid_argument("unscale_inputs: column count mismatch");
    Eigen::MatrixXd out(scaled.rows(), scaled.cols());
    for (Eigen::Index j = 0; j < scaled.cols(); ++j)
      for (Eigen::Index i = 0; i < scaled.rows(); ++i)
        out(i, j) = maps[static_cast<std::size_t>(j)].unscale(scaled(i, j));
    return out;
  }

  /// Axis-aligned domain in raw units.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> raw_bounds() const {
    Eigen::VectorXd lo(input_dims()), hi(input_dims());
    for (Eigen::Index j = 0; j < input_dims(); ++j) {
      lo(j) = maps[static_cast<std::size_t>(j)].lo;
      hi(j) = maps[static_cast<std::size_t>(j)].hi;
    }
    return {lo, hi};
  }

  /// Linear coefficients (intercept first) mapped from scaled inputs and
  /// modelled response back to raw units.
  Eigen::VectorXd unscale_coefficients(const Eigen::VectorXd &beta) const {
    Eigen::VectorXd out = beta * response.spread;
    out(0) = beta(0) * response.spread + response.center;
    for (Eigen::Index j = 0; j < input_dims(); ++j) {
      const auto &m = maps[static_cast<std::size_t>(j)];
      if (m.constant()) {
        out(0) += 0.5 * beta(j + 1) * response.spread;
        out(j + 1) = 0.0;
        continue;
      }
      const double w = m.hi - m.lo;
      out(j + 1) = beta(j + 1) * response.spread / w;
      out(0) -= beta(j + 1) * response.spread * m.lo / w;
    }
    return out;
  }
};

struct DatasetOptions {
  /// Fixed scaling bounds per dimension; observed min/max when absent.
  std::optional<std::pair<Eigen::VectorXd, Eigen::VectorXd>> bounds;
  bool standardize_response = false;
  std::vector<std::string> names;
};

inline Dataset make_dataset(Eigen::MatrixXd X_raw, Eigen::VectorXd y_raw,
                            const DatasetOptions &opt = {}) {
  if (X_raw.rows() != y_raw.size())
    throw std::invalid_argument("make_dataset: X and y row mismatch");
  if (X_raw.rows() < 1) throw std::invalid_argument("make_dataset: no rows");
  if (!X_raw.allFinite() || !y_raw.allFinite())
    throw std::invalid_argument("make_dataset: non-finite values");
  Dataset ds;
  ds.names = opt.names;
  ds.maps.resize(static_cast<std::size_t>(X_raw.cols()));
  for (Eigen::Index j = 0; j < X_raw.cols(); ++j) {
    ScaleMap &m = ds.maps[static_cast<std::size_t>(j)];
    if (opt.bounds) {
      m.lo = opt.bounds->first(j);
      m.hi = opt.bounds->second(j);
      if (!(m.hi > m.lo)) throw std::invalid_argument("make_dataset: empty bound interval");
    } else {
      m.lo = X_raw.col(j).minCoeff();
      m.hi = X_raw.col(j).maxCoeff();
    }
    if (m.constant()) {
      const std::string name = j < static_cast<Eigen::Index>(opt.names.size())
                                   ? opt.names[static_cast<std::size_t>(j)]
                                   : "x" + std::to_string(j + 1);
      ds.warnings.push_back("input column '" + name + "' is constant; scaled to 0.5");
    }
  }
  ds.X_raw = std::move(X_raw);
  ds.y_raw = std::move(y_raw);
  ds.X_scaled = ds.scale_inputs(ds.X_raw);
  if (opt.standardize_response && ds.y_raw.size() > 1) {
    ds.response.center = ds.y_raw.mean();
    const double var = (ds.y_raw.array() - ds.response.center).square().sum() /
                       static_cast<double>(ds.y_raw.size() - 1);
    ds.response.spread = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  ds.y = (ds.y_raw.array() - ds.response.center) / ds.response.spread;
  return ds;
}

} // namespace gpllm
