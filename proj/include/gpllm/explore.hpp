#pragma once

// Likelihood and marginal-posterior surfaces over a (d, g) grid for a
// single isotropic range, with the linear model as reference.

#include "gpllm/kernel.hpp"
#include "gpllm/model.hpp"
#include "gpllm/prior.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

namespace gpllm {

struct SurfaceCell {
  double d = 0.0;
  double g = 0.0;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double logpost = std::numeric_limits<double>::quiet_NaN();
  bool stable = false;
};

struct SurfaceTable {
  std::vector<SurfaceCell> cells;
  double lm_loglik = 0.0;                  // ML linear model, K = I
  std::vector<SurfaceCell> llm_row;        // K = (1 + g) I for each g
  /// max over stable cells and the linear model of L_GP / L_LM.
  double likelihood_ratio() const {
    double best = lm_loglik;
    for (const auto &c : cells)
      if (c.stable && c.loglik > best) best = c.loglik;
    for (const auto &c : llm_row)
      if (c.stable && c.loglik > best) best = c.loglik;
    return std::exp(best - lm_loglik);
  }
};

/// Fixed linear-prior values at which the marginal posterior is evaluated.
struct ExploreSettings {
  double tau2 = 1.0;
  std::optional<SharedState> shared;   // beta0 = mu, W = I by default
};

/// Profile log-likelihood N(y | F beta_hat, sigma_hat^2 K) with the GLS
/// beta_hat and sigma_hat^2 = r'K^{-1}r / n.
inline double profile_loglik(const RegressionData &data, const CovMatrix &cm) {
  const auto s = summarize(data, cm);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s.FtKiF);
  const Eigen::VectorXd beta = ldlt.solve(s.FtKiy);
  const Eigen::VectorXd r = data.y - data.F * beta;
  const double n = static_cast<double>(data.n());
  const double quad = cm.half_solve(r).squaredNorm();
  const double sigma2 = quad / n;
  return -0.5 * n * std::log(2.0 * std::numbers::pi * sigma2) - 0.5 * cm.log_det() - 0.5 * n;
}

inline SurfaceTable explore_surfaces(const RegressionData &data,
                                     const std::vector<double> &d_grid,
                                     const std::vector<double> &g_grid,
                                     const HyperParams &hyper, const LLMPriorParams &pp,
                                     const ExploreSettings &settings = {}) {
  const SharedState shared = settings.shared ? *settings.shared : SharedState::initial(hyper);
  SurfaceTable out;
  out.lm_loglik = profile_loglik(data, CovMatrix::linear(data.n(), 0.0));
  CorrelationState cs = CorrelationState::make(data.input_dims());
  for (double g : g_grid) {
    cs.nugget = g;
    for (double d : d_grid) {
      cs.range.setConstant(d);
      cs.active.assign(cs.active.size(), true);
      SurfaceCell cell{d, g};
      if (auto cm = try_build_cov(data.X, cs)) {
        cell.stable = true;
        cell.loglik = profile_loglik(data, *cm);
        if (g > 0.0) {
          const double lp = static_cast<double>(data.input_dims()) * log_prior_d(d, pp) +
                            log_prior_g(g, pp);
          cell.logpost =
              log_marginal_posterior(summarize(data, *cm), shared, settings.tau2, hyper, lp);
        }
      }
      out.cells.push_back(cell);
    }
    SurfaceCell llm{0.0, g};
    const auto cm = CovMatrix::linear(data.n(), g);
    llm.stable = true;
    llm.loglik = profile_loglik(data, cm);
    if (g > 0.0)
      llm.logpost = log_marginal_posterior(summarize(data, cm), shared, settings.tau2, hyper,
                                           log_prior_g(g, pp));
    out.llm_row.push_back(llm);
  }
  return out;
}

inline std::vector<double> log_grid(double lo, double hi, int count) {
  std::vector<double> out;
  if (count == 1) return {lo};
  for (int i = 0; i < count; ++i)
    out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  return out;
}

} // namespace gpllm
