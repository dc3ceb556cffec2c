#pragma once

// Hierarchical linear-mean GP: parameter state, conjugate full conditionals
// and the marginal posterior of the covariance with beta and sigma^2
// integrated out.

#include "gpllm/kernel.hpp"
#include "gpllm/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace gpllm {

/// Scaled inputs X, extended design F = (1, X), response y, and the
/// cross-products the linear-model path needs.
struct RegressionData {
  Eigen::MatrixXd X;
  Eigen::MatrixXd F;
  Eigen::VectorXd y;
  Eigen::MatrixXd FtF;
  Eigen::VectorXd Fty;
  double yty = 0.0;

  RegressionData() = default;
  RegressionData(Eigen::MatrixXd X_, Eigen::VectorXd y_)
      : X(std::move(X_)), y(std::move(y_)) {
    if (X.rows() != y.size())
      throw std::invalid_argument("RegressionData: X and y row mismatch");
    F = design(X);
    FtF = F.transpose() * F;
    Fty = F.transpose() * y;
    yty = y.squaredNorm();
  }

  static Eigen::MatrixXd design(const Eigen::MatrixXd &X) {
    Eigen::MatrixXd F(X.rows(), X.cols() + 1);
    F.col(0).setOnes();
    F.rightCols(X.cols()) = X;
    return F;
  }

  static RegressionData empty(Eigen::Index input_dims) {
    return RegressionData(Eigen::MatrixXd(0, input_dims), Eigen::VectorXd(0));
  }

  RegressionData subset(std::span<const int> rows) const {
    Eigen::MatrixXd Xs(static_cast<Eigen::Index>(rows.size()), X.cols());
    Eigen::VectorXd ys(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Xs.row(static_cast<Eigen::Index>(r)) = X.row(rows[r]);
      ys(static_cast<Eigen::Index>(r)) = y(rows[r]);
    }
    return RegressionData(std::move(Xs), std::move(ys));
  }

  Eigen::Index n() const { return y.size(); }
  Eigen::Index input_dims() const { return X.cols(); }
  Eigen::Index m() const { return X.cols() + 1; }
};

struct HyperParams {
  Eigen::VectorXd mu;     // prior mean of beta0
  Eigen::MatrixXd B;      // prior covariance of beta0
  Eigen::MatrixXd V;      // W^{-1} ~ Wishart((rho V)^{-1}, rho)
  double rho = 0.0;
  double alpha_sigma = 5.0, q_sigma = 10.0;
  double alpha_tau = 5.0, q_tau = 10.0;

  static HyperParams defaults(Eigen::Index m) {
    HyperParams h;
    h.mu = Eigen::VectorXd::Zero(m);
    h.B = 1000.0 * Eigen::MatrixXd::Identity(m, m);
    h.V = Eigen::MatrixXd::Identity(m, m);
    h.rho = static_cast<double>(m + 1);
    return h;
  }

  Eigen::Index m() const { return mu.size(); }

  void validate() const {
    const auto m_ = m();
    if (B.rows() != m_ || B.cols() != m_ || V.rows() != m_ || V.cols() != m_)
      throw std::invalid_argument("HyperParams: matrix dimensions");
    if (Eigen::LLT<Eigen::MatrixXd>(B).info() != Eigen::Success ||
        Eigen::LLT<Eigen::MatrixXd>(V).info() != Eigen::Success)
      throw std::invalid_argument("HyperParams: B and V must be SPD");
    if (rho < static_cast<double>(m_))
      throw std::invalid_argument("HyperParams: rho must be at least m");
    if (!(alpha_sigma > 0 && q_sigma > 0 && alpha_tau > 0 && q_tau > 0))
      throw std::invalid_argument("HyperParams: inverse-gamma parameters must be positive");
  }
};

struct GPState {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  double tau2 = 1.0;
  CorrelationState corr;
};

struct SharedState {
  Eigen::VectorXd beta0;
  Eigen::MatrixXd W;
  int leaf_count = 1;

  static SharedState initial(const HyperParams &hyper) {
    return {hyper.mu, Eigen::MatrixXd::Identity(hyper.m(), hyper.m()), 1};
  }
};

struct GaussianParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// IG(shape, scale) with density proportional to x^{-shape-1} e^{-scale/x}.
struct InverseGammaParams {
  double shape = 1.0;
  double scale = 1.0;
};

struct WishartParams {
  double dof = 1.0;
  Eigen::MatrixXd scale;
};

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd &A,
                                              const char *what) {
  count_small_factorization();
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw std::domain_error(std::string(what) + " is not positive definite");
  return llt;
}

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd &A, const char *what) {
  return spd_factor(A, what).solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
}

inline double log_det_chol(const Eigen::LLT<Eigen::MatrixXd> &llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

} // namespace detail

/// Data-side quadratic forms for one covariance: F'K^{-1}F, F'K^{-1}y,
/// y'K^{-1}y and log|K|. Under the linear model these come from the cached
/// cross-products in O(m^2).
struct CovarianceSummary {
  Eigen::Index n = 0;
  Eigen::MatrixXd FtKiF;
  Eigen::VectorXd FtKiy;
  double ytKiy = 0.0;
  double log_det_K = 0.0;
  bool is_llm = false;
};

inline CovarianceSummary summarize(const RegressionData &data,
                                   const CovMatrix &cm) {
  if (cm.size() != data.n())
    throw std::invalid_argument("summarize: covariance size does not match data");
  CovarianceSummary s;
  s.n = data.n();
  s.log_det_K = cm.log_det();
  s.is_llm = cm.is_llm();
  if (cm.is_llm()) {
    const double c = 1.0 + cm.nugget();
    s.FtKiF = data.FtF / c;
    s.FtKiy = data.Fty / c;
    s.ytKiy = data.yty / c;
    return s;
  }
  const Eigen::MatrixXd LiF = cm.half_solve(data.F);
  const Eigen::VectorXd Liy = cm.half_solve(data.y);
  s.FtKiF = LiF.transpose() * LiF;
  s.FtKiy = LiF.transpose() * Liy;
  s.ytKiy = Liy.squaredNorm();
  return s;
}

/// beta | rest ~ N(mean, sigma^2 * V_beta); this holds mean and V_beta.
struct BetaConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd V;
  Eigen::MatrixXd V_chol;       // lower factor of V
  Eigen::MatrixXd precision;    // V^{-1}
  double log_det_V = 0.0;
};

inline BetaConditional beta_conditional(const CovarianceSummary &s,
                                        const SharedState &shared, double tau2) {
  const Eigen::MatrixXd Winv = detail::spd_inverse(shared.W, "W");
  BetaConditional bc;
  bc.precision = s.FtKiF + Winv / tau2;
  const auto prec = detail::spd_factor(bc.precision, "V_beta^{-1}");
  const Eigen::Index m = bc.precision.rows();
  bc.V = prec.solve(Eigen::MatrixXd::Identity(m, m));
  bc.V = 0.5 * (bc.V + bc.V.transpose());
  bc.mean = prec.solve(s.FtKiy + Winv * shared.beta0 / tau2);
  const auto vchol = detail::spd_factor(bc.V, "V_beta");
  bc.V_chol = vchol.matrixL();
  bc.log_det_V = -detail::log_det_chol(prec);
  return bc;
}

inline BetaConditional beta_conditional(const RegressionData &data,
                                        const CovMatrix &cm,
                                        const SharedState &shared, double tau2) {
  return beta_conditional(summarize(data, cm), shared, tau2);
}

/// Per-leaf linear parameters entering the beta0 and W conditionals.
struct LeafCoefficients {
  Eigen::VectorXd beta;
  double sigma2 = 1.0;
  double tau2 = 1.0;
};

inline GaussianParams beta0_conditional(std::span<const LeafCoefficients> leaves,
                                        const Eigen::MatrixXd &W,
                                        const HyperParams &hyper) {
  const Eigen::MatrixXd Binv = detail::spd_inverse(hyper.B, "B");
  const Eigen::MatrixXd Winv = detail::spd_inverse(W, "W");
  double weight = 0.0;
  Eigen::VectorXd weighted_beta = Eigen::VectorXd::Zero(hyper.m());
  for (const auto &leaf : leaves) {
    const double w = 1.0 / (leaf.sigma2 * leaf.tau2);
    weight += w;
    weighted_beta += w * leaf.beta;
  }
  const Eigen::MatrixXd precision = Binv + Winv * weight;
  const auto llt = detail::spd_factor(precision, "V_beta0^{-1}");
  GaussianParams out;
  out.cov = llt.solve(Eigen::MatrixXd::Identity(hyper.m(), hyper.m()));
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.mean = llt.solve(Binv * hyper.mu + Winv * weighted_beta);
  return out;
}

/// sigma^2 | beta, rest.
inline InverseGammaParams sigma2_conditional(const RegressionData &data,
                                             const CovMatrix &cm,
                                             const Eigen::VectorXd &beta,
                                             const SharedState &shared,
                                             double tau2,
                                             const HyperParams &hyper) {
  const Eigen::VectorXd resid = data.y - data.F * beta;
  const double data_quad =
      data.n() > 0 ? cm.half_solve(resid).squaredNorm() : 0.0;
  const Eigen::VectorXd dev = beta - shared.beta0;
  const double prior_quad =
      dev.dot(detail::spd_factor(shared.W, "W").solve(dev)) / tau2;
  const double m = static_cast<double>(hyper.m());
  return {0.5 * (hyper.alpha_sigma + static_cast<double>(data.n()) + m),
          0.5 * (hyper.q_sigma + data_quad + prior_quad)};
}

/// Quantities of the marginal posterior that depend on the linear prior.
struct MarginalTerms {
  BetaConditional beta;
  double psi = 0.0;
};

inline MarginalTerms marginal_terms(const CovarianceSummary &s,
                                    const SharedState &shared, double tau2) {
  MarginalTerms t{beta_conditional(s, shared, tau2), 0.0};
  const Eigen::VectorXd Winv_b0 =
      detail::spd_factor(shared.W, "W").solve(shared.beta0);
  t.psi = s.ytKiy + shared.beta0.dot(Winv_b0) / tau2 -
          t.beta.mean.dot(t.beta.precision * t.beta.mean);
  // psi is a sum of squares; cancellation can push it a hair below zero.
  if (t.psi < 0.0) t.psi = 0.0;
  return t;
}

/// sigma^2 | K, tau2, beta0, W with beta integrated out.
inline InverseGammaParams sigma2_marginal_conditional(const CovarianceSummary &s,
                                                      const SharedState &shared,
                                                      double tau2,
                                                      const HyperParams &hyper) {
  const auto t = marginal_terms(s, shared, tau2);
  return {0.5 * (hyper.alpha_sigma + static_cast<double>(s.n)),
          0.5 * (hyper.q_sigma + t.psi)};
}

inline InverseGammaParams tau2_conditional(const Eigen::VectorXd &beta,
                                           const Eigen::VectorXd &beta0,
                                           const Eigen::MatrixXd &W,
                                           double sigma2,
                                           const HyperParams &hyper) {
  const Eigen::VectorXd dev = beta - beta0;
  const double quad = dev.dot(detail::spd_factor(W, "W").solve(dev));
  return {0.5 * (hyper.alpha_tau + static_cast<double>(hyper.m())),
          0.5 * (hyper.q_tau + quad / sigma2)};
}

/// Conditional for W^{-1}.
inline WishartParams wishart_conditional(std::span<const LeafCoefficients> leaves,
                                         const Eigen::VectorXd &beta0,
                                         const HyperParams &hyper) {
  Eigen::MatrixXd S = hyper.rho * hyper.V;
  for (const auto &leaf : leaves) {
    const Eigen::VectorXd dev = leaf.beta - beta0;
    S += dev * dev.transpose() / (leaf.sigma2 * leaf.tau2);
  }
  WishartParams out;
  out.dof = hyper.rho + static_cast<double>(leaves.size());
  out.scale = detail::spd_inverse(S, "Wishart scale");
  out.scale = 0.5 * (out.scale + out.scale.transpose());
  return out;
}

/// log p(y | K, beta0, W, tau2) with beta and sigma^2 integrated out; the
/// marginal posterior without the prior on K.
inline double log_marginal_likelihood(const CovarianceSummary &s,
                                      const SharedState &shared, double tau2,
                                      const HyperParams &hyper) {
  const auto t = marginal_terms(s, shared, tau2);
  const double n = static_cast<double>(s.n);
  const double m = static_cast<double>(hyper.m());
  const double a = hyper.alpha_sigma;
  const double q = hyper.q_sigma;
  const double log_det_W =
      detail::log_det_chol(detail::spd_factor(shared.W, "W"));
  return 0.5 * t.beta.log_det_V - 0.5 * n * std::log(2.0 * std::numbers::pi) -
         0.5 * s.log_det_K - 0.5 * log_det_W - 0.5 * m * std::log(tau2) +
         0.5 * a * std::log(0.5 * q) + std::lgamma(0.5 * (a + n)) -
         0.5 * (a + n) * std::log(0.5 * (q + t.psi)) - std::lgamma(0.5 * a);
}

inline double log_marginal_posterior(const CovarianceSummary &s,
                                     const SharedState &shared, double tau2,
                                     const HyperParams &hyper,
                                     double log_prior_K) {
  return log_marginal_likelihood(s, shared, tau2, hyper) + log_prior_K;
}

inline double log_marginal_posterior(const RegressionData &data,
                                     const CovMatrix &cm,
                                     const SharedState &shared, double tau2,
                                     const HyperParams &hyper,
                                     double log_prior_K) {
  return log_marginal_posterior(summarize(data, cm), shared, tau2, hyper,
                                log_prior_K);
}

} // namespace gpllm
