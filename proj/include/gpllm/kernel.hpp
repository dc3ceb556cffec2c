#pragma once

// Separable power-family correlation with nugget and per-dimension GP/linear
// indicators, plus the covariance factorization shared by every consumer.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gpllm {

class SingularCovariance : public std::runtime_error {
public:
  explicit SingularCovariance(const std::string &what)
      : std::runtime_error(what) {}
};

/// Per-thread operation counters. Dense counts are n x n Cholesky
/// factorizations; small counts are the m x m ones used by linear-model paths.
struct OpCounters {
  std::size_t dense_factorizations = 0;
  double dense_flops = 0.0;
  std::size_t small_factorizations = 0;
};

inline OpCounters &op_counters() {
  thread_local OpCounters counters;
  return counters;
}

inline void reset_op_counters() { op_counters() = OpCounters{}; }

inline void count_dense_factorization(Eigen::Index n) {
  auto &c = op_counters();
  ++c.dense_factorizations;
  c.dense_flops += std::pow(static_cast<double>(n), 3) / 3.0;
}

inline void count_small_factorization() { ++op_counters().small_factorizations; }

struct CorrelationState {
  Eigen::VectorXd range;      // d, one per input dimension
  double nugget = 0.1;        // g
  std::vector<bool> active;   // b_i = 1 keeps dimension i in the GP
  Eigen::VectorXd power;      // p_i in (0, 2]

  static CorrelationState make(Eigen::Index dims, double range0 = 0.5,
                               double nugget0 = 0.1) {
    CorrelationState cs;
    cs.range = Eigen::VectorXd::Constant(dims, range0);
    cs.nugget = nugget0;
    cs.active.assign(static_cast<std::size_t>(dims), true);
    cs.power = Eigen::VectorXd::Constant(dims, 2.0);
    return cs;
  }

  Eigen::Index dims() const { return range.size(); }

  /// True when every indicator is zero, i.e. the limiting linear model.
  bool is_linear() const {
    for (bool b : active)
      if (b) return false;
    return true;
  }

  std::size_t active_count() const {
    std::size_t k = 0;
    for (bool b : active) k += b ? 1 : 0;
    return k;
  }

  void validate() const {
    if (static_cast<std::size_t>(range.size()) != active.size() ||
        power.size() != range.size())
      throw std::invalid_argument("CorrelationState: inconsistent lengths");
    if (!(nugget > 0.0) || !std::isfinite(nugget))
      throw std::invalid_argument("CorrelationState: nugget must be positive");
    for (Eigen::Index i = 0; i < range.size(); ++i) {
      if (!(range(i) > 0.0) || !std::isfinite(range(i)))
        throw std::invalid_argument("CorrelationState: range must be positive");
      if (!(power(i) > 0.0 && power(i) <= 2.0))
        throw std::invalid_argument("CorrelationState: power must lie in (0, 2]");
    }
  }
};

/// Raw correlation formula exp{-sum_i b_i |dx_i|^p_i / d_i} + g * [same point].
/// Dimensions with b_i = 0 drop out of the sum, so an all-zero b gives 1 off
/// the diagonal; build_cov overrides that case with (1 + g) I.
inline double corr_entry(const Eigen::Ref<const Eigen::VectorXd> &xj,
                         const Eigen::Ref<const Eigen::VectorXd> &xk,
                         const CorrelationState &cs, bool same_point) {
  if (xj.size() != cs.dims() || xk.size() != cs.dims())
    throw std::invalid_argument("corr_entry: dimension mismatch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < cs.dims(); ++i) {
    if (!cs.active[static_cast<std::size_t>(i)]) continue;
    const double dx = std::abs(xj(i) - xk(i));
    const double p = cs.power(i);
    sum += (p == 2.0 ? dx * dx : std::pow(dx, p)) / cs.range(i);
  }
  return std::exp(-sum) + (same_point ? cs.nugget : 0.0);
}

/// Correlations between rows of A and rows of B without nugget.
inline Eigen::MatrixXd cross_correlation(const Eigen::MatrixXd &A,
                                         const Eigen::MatrixXd &B,
                                         const CorrelationState &cs) {
  if (A.cols() != cs.dims() || B.cols() != cs.dims())
    throw std::invalid_argument("cross_correlation: dimension mismatch");
  Eigen::MatrixXd out(A.rows(), B.rows());
  if (cs.is_linear()) {
    out.setZero();
    return out;
  }
  Eigen::MatrixXd expo = Eigen::MatrixXd::Zero(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < cs.dims(); ++i) {
    if (!cs.active[static_cast<std::size_t>(i)]) continue;
    const double p = cs.power(i);
    const double inv_d = 1.0 / cs.range(i);
    for (Eigen::Index k = 0; k < B.rows(); ++k) {
      const double bk = B(k, i);
      for (Eigen::Index j = 0; j < A.rows(); ++j) {
        const double dx = std::abs(A(j, i) - bk);
        expo(j, k) += (p == 2.0 ? dx * dx : std::pow(dx, p)) * inv_d;
      }
    }
  }
  out = (-expo.array()).exp().matrix();
  return out;
}

/// Factored covariance. Under the limiting linear model no dense matrix is
/// held: K = (1 + g) I and every solve is a scalar division.
class CovMatrix {
public:
  static CovMatrix linear(Eigen::Index n, double nugget) {
    CovMatrix cm;
    cm.n_ = n;
    cm.nugget_ = nugget;
    cm.is_llm_ = true;
    cm.log_det_ = static_cast<double>(n) * std::log1p(nugget);
    return cm;
  }

  static std::optional<CovMatrix> factor(Eigen::MatrixXd K, double nugget) {
    CovMatrix cm;
    cm.n_ = K.rows();
    cm.nugget_ = nugget;
    cm.is_llm_ = false;
    count_dense_factorization(cm.n_);
    cm.chol_.compute(K);
    if (cm.chol_.info() != Eigen::Success) return std::nullopt;
    const auto L = cm.chol_.matrixLLT();
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < cm.n_; ++i) {
      const double lii = L(i, i);
      // Pivots below this floor mean the factor is noise; (1 + g) bounds K_ii.
      if (!std::isfinite(lii) || lii * lii <= 1e-14 * (1.0 + nugget))
        return std::nullopt;
      log_det += 2.0 * std::log(lii);
    }
    cm.log_det_ = log_det;
    cm.K_ = std::move(K);
    return cm;
  }

  Eigen::Index size() const { return n_; }
  bool is_llm() const { return is_llm_; }
  double nugget() const { return nugget_; }
  double log_det() const { return log_det_; }

  /// Dense K; for the linear case materializes (1 + g) I on demand.
  Eigen::MatrixXd matrix() const {
    if (is_llm_)
      return Eigen::MatrixXd::Identity(n_, n_) * (1.0 + nugget_);
    return K_;
  }

  Eigen::MatrixXd lower() const {
    if (is_llm_)
      return Eigen::MatrixXd::Identity(n_, n_) * std::sqrt(1.0 + nugget_);
    return chol_.matrixL();
  }

  template <typename Rhs> Eigen::MatrixXd solve(const Rhs &rhs) const {
    if (rhs.rows() != n_)
      throw std::invalid_argument("CovMatrix::solve: row mismatch");
    if (is_llm_) return rhs / (1.0 + nugget_);
    return chol_.solve(rhs);
  }

  /// L^{-1} rhs, used for quadratic forms.
  Eigen::MatrixXd half_solve(const Eigen::MatrixXd &rhs) const {
    if (is_llm_) return rhs / std::sqrt(1.0 + nugget_);
    return chol_.matrixL().solve(rhs);
  }

private:
  Eigen::Index n_ = 0;
  double nugget_ = 0.0;
  bool is_llm_ = false;
  double log_det_ = 0.0;
  Eigen::MatrixXd K_;
  Eigen::LLT<Eigen::MatrixXd> chol_;
};

inline Eigen::MatrixXd dense_correlation(const Eigen::MatrixXd &X,
                                         const CorrelationState &cs) {
  Eigen::MatrixXd K = cross_correlation(X, X, cs);
  if (cs.is_linear()) K.setOnes();
  K.diagonal().array() += cs.nugget;
  return K;
}

/// Returns std::nullopt when the Cholesky factorization breaks down.
inline std::optional<CovMatrix> try_build_cov(const Eigen::MatrixXd &X,
                                              const CorrelationState &cs) {
  if (X.cols() != cs.dims())
    throw std::invalid_argument("build_cov: dimension mismatch");
  if (cs.is_linear()) return CovMatrix::linear(X.rows(), cs.nugget);
  return CovMatrix::factor(dense_correlation(X, cs), cs.nugget);
}

inline CovMatrix build_cov(const Eigen::MatrixXd &X, const CorrelationState &cs) {
  auto cm = try_build_cov(X, cs);
  if (!cm)
    throw SingularCovariance("covariance matrix is numerically singular (n = " +
                             std::to_string(X.rows()) + ")");
  return std::move(*cm);
}

inline Eigen::MatrixXd solve_with_cov(const CovMatrix &cm,
                                      const Eigen::MatrixXd &rhs) {
  return cm.solve(rhs);
}

} // namespace gpllm
