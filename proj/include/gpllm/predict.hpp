#pragma once

// Posterior predictive moments. Dense kriging equations when any dimension
// is in the GP; the m x m linear-model form when all indicators are zero.

#include "gpllm/kernel.hpp"
#include "gpllm/model.hpp"
#include "gpllm/sampler.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace gpllm {

struct PointMoments {
  double mean = 0.0;
  double variance = 0.0;
};

struct PredictiveMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd lower;   // 5% quantile of the predictive mixture
  Eigen::VectorXd upper;   // 95% quantile
  double llm_weight = 0.0;
};

inline Eigen::VectorXd basis(const Eigen::Ref<const Eigen::VectorXd> &x) {
  Eigen::VectorXd f(x.size() + 1);
  f(0) = 1.0;
  f.tail(x.size()) = x;
  return f;
}

/// kappa - q'C^{-1}q with C = K + tau2 F W F', rewritten by the matrix
/// inversion lemma so only K's factor is needed:
/// K(x,x) - k'K^{-1}k + h'V h with h = f - F'K^{-1}k. Columns of k and rows of
/// Fq index the queries.
inline Eigen::VectorXd gp_variance_factor(const CovMatrix &cm, const Eigen::MatrixXd &F,
                                          const Eigen::MatrixXd &k, const Eigen::MatrixXd &Fq,
                                          const Eigen::MatrixXd &V, double kxx) {
  const Eigen::MatrixXd Lik = cm.half_solve(k);
  const Eigen::MatrixXd LiF = cm.half_solve(F);
  const Eigen::MatrixXd h = Fq.transpose() - LiF.transpose() * Lik;   // m x nq
  const Eigen::VectorXd kriging = Lik.colwise().squaredNorm().transpose();
  const Eigen::VectorXd trend = (h.array() * (V * h).array()).colwise().sum().transpose();
  return (kxx - kriging.array() + trend.array()).matrix();
}

/// Predictor for one posterior sample; query-independent work is done once.
class SamplePredictor {
public:
  SamplePredictor(const GPState &state, const SharedState &shared,
                  const RegressionData &data)
      : state_(state), data_(data) {
    if (state.corr.is_linear()) {
      const auto cm = CovMatrix::linear(data.n(), state.corr.nugget);
      beta_ = beta_conditional(summarize(data, cm), shared, state.tau2);
      return;
    }
    cm_ = build_cov(data.X, state.corr);
    beta_ = beta_conditional(summarize(data, *cm_), shared, state.tau2);
    weights_ = cm_->solve(data.y - data.F * beta_.mean);
  }

  bool linear_path() const { return state_.corr.is_linear(); }
  const BetaConditional &beta() const { return beta_; }

  /// Means and variances at each row of Xq (scaled inputs).
  void predict(const Eigen::MatrixXd &Xq, Eigen::VectorXd &mean,
               Eigen::VectorXd &variance) const {
    const Eigen::MatrixXd Fq = RegressionData::design(Xq);
    const double kxx = 1.0 + state_.corr.nugget;
    mean = Fq * beta_.mean;
    if (linear_path()) {
      const Eigen::MatrixXd FqV = Fq * beta_.V;
      variance = state_.sigma2 *
                 (kxx + (FqV.array() * Fq.array()).rowwise().sum()).matrix();
      return;
    }
    const Eigen::MatrixXd k = cross_correlation(data_.X, Xq, state_.corr); // n x nq
    mean += k.transpose() * weights_;
    variance = state_.sigma2 * gp_variance_factor(*cm_, data_.F, k, Fq, beta_.V, kxx);
  }

  PointMoments operator()(const Eigen::VectorXd &x) const {
    Eigen::MatrixXd Xq = x.transpose();
    Eigen::VectorXd m, v;
    predict(Xq, m, v);
    return {m(0), v(0)};
  }

private:
  GPState state_;
  const RegressionData &data_;
  BetaConditional beta_;
  std::optional<CovMatrix> cm_;
  Eigen::VectorXd weights_;
};

/// Kriging mean and variance with an explicit covariance; takes the n x n
/// route even when K happens to be (1 + g) I.
inline PointMoments predict_gp(const Eigen::VectorXd &x, const GPState &state,
                               const SharedState &shared, const RegressionData &data,
                               const CovMatrix &cm) {
  const auto bc = beta_conditional(summarize(data, cm), shared, state.tau2);
  const Eigen::VectorXd f = basis(x);
  Eigen::VectorXd k(data.n());
  if (!state.corr.is_linear())
    k = cross_correlation(data.X, x.transpose(), state.corr).col(0);
  else
    k.setZero();
  const double mean =
      f.dot(bc.mean) + k.dot(cm.solve(data.y - data.F * bc.mean).col(0));
  const Eigen::VectorXd v = gp_variance_factor(cm, data.F, k, f.transpose(), bc.V,
                                               1.0 + state.corr.nugget);
  return {mean, state.sigma2 * v(0)};
}

/// Linear-model predictive: only an m x m system is solved.
inline PointMoments predict_llm(const Eigen::VectorXd &x, const GPState &state,
                                const SharedState &shared, const RegressionData &data) {
  if (!state.corr.is_linear())
    throw std::invalid_argument("predict_llm: state has active GP dimensions");
  const auto cm = CovMatrix::linear(data.n(), state.corr.nugget);
  const auto bc = beta_conditional(summarize(data, cm), shared, state.tau2);
  const Eigen::VectorXd f = basis(x);
  return {f.dot(bc.mean), state.sigma2 * (1.0 + state.corr.nugget + f.dot(bc.V * f))};
}

/// Running mixture moments over posterior samples (law of total variance).
class MomentAccumulator {
public:
  explicit MomentAccumulator(Eigen::Index nq)
      : sum_mean_(Eigen::VectorXd::Zero(nq)), sum_second_(Eigen::VectorXd::Zero(nq)) {}

  void add(const Eigen::VectorXd &mean, const Eigen::VectorXd &variance, bool linear) {
    sum_mean_ += mean;
    sum_second_ += (variance.array() + mean.array().square()).matrix();
    means_.push_back(mean);
    sds_.push_back(variance.cwiseMax(0.0).cwiseSqrt());
    ++count_;
    linear_ += linear ? 1 : 0;
  }

  /// Adds per-query values where each query may come from a different path.
  void add_mixed(const Eigen::VectorXd &mean, const Eigen::VectorXd &variance,
                 double linear_share) {
    add(mean, variance, false);
    linear_share_ += linear_share;
  }

  std::size_t count() const { return count_; }

  PredictiveMoments finish() const {
    if (count_ == 0) throw std::invalid_argument("aggregate: empty trace");
    const double s = static_cast<double>(count_);
    PredictiveMoments out;
    out.mean = sum_mean_ / s;
    out.variance = (sum_second_ / s).array() - out.mean.array().square();
    out.variance = out.variance.cwiseMax(0.0);
    out.llm_weight = (static_cast<double>(linear_) + linear_share_) / s;
    const Eigen::Index nq = out.mean.size();
    out.lower.resize(nq);
    out.upper.resize(nq);
    for (Eigen::Index j = 0; j < nq; ++j) {
      out.lower(j) = quantile(j, 0.05);
      out.upper(j) = quantile(j, 0.95);
    }
    return out;
  }

private:
  double mixture_cdf(Eigen::Index j, double v) const {
    double acc = 0.0;
    for (std::size_t s = 0; s < means_.size(); ++s) {
      const double sd = sds_[s](j);
      acc += sd > 0.0 ? normal_cdf((v - means_[s](j)) / sd)
                      : (v >= means_[s](j) ? 1.0 : 0.0);
    }
    return acc / static_cast<double>(means_.size());
  }

  double quantile(Eigen::Index j, double p) const {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t s = 0; s < means_.size(); ++s) {
      lo = std::min(lo, means_[s](j) - 10.0 * sds_[s](j));
      hi = std::max(hi, means_[s](j) + 10.0 * sds_[s](j));
    }
    for (int it = 0; it < 80 && hi - lo > 1e-12 * (1.0 + std::abs(hi)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (mixture_cdf(j, mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  Eigen::VectorXd sum_mean_, sum_second_;
  std::vector<Eigen::VectorXd> means_, sds_;
  std::size_t count_ = 0;
  std::size_t linear_ = 0;
  double linear_share_ = 0.0;
};

/// Averages per-sample predictive moments over a stationary trace. Queries
/// are on the scaled input space.
inline PredictiveMoments aggregate_predictions(std::span<const TraceRecord> trace,
                                               const RegressionData &data,
                                               const Eigen::MatrixXd &queries) {
  if (trace.empty()) throw std::invalid_argument("aggregate_predictions: empty trace");
  MomentAccumulator acc(queries.rows());
  Eigen::VectorXd mean, var;
  for (const auto &rec : trace) {
    const SamplePredictor predictor(rec.state, rec.shared, data);
    predictor.predict(queries, mean, var);
    acc.add(mean, var, predictor.linear_path());
  }
  return acc.finish();
}

} // namespace gpllm
