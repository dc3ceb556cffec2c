#pragma once

// Independent oracles shared by the unit tests and the acceptance binary:
// forward prior simulation, the Geweke joint test, grid-discretized targets
// for one-parameter sub-chains, a quadrature marginal likelihood and a
// literal dense predictive.

#include "gpllm/gpllm.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace gpllm::oracle {

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng &rng) {
  Eigen::MatrixXd M(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = draw_uniform(rng);
  return M;
}

inline Eigen::MatrixXd random_spd(Eigen::Index m, Rng &rng) {
  const Eigen::MatrixXd A = random_matrix(m, m, rng);
  return A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(m, m);
}

inline double log_mvn(const Eigen::VectorXd &x, const Eigen::VectorXd &mean,
                      const Eigen::MatrixXd &S) {
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  const Eigen::VectorXd r = x - mean;
  const double quad = r.dot(llt.solve(r));
  const double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

/// beta integrated analytically (y | sigma2 ~ N(F beta0, sigma2 (K + tau2 F W F'))),
/// sigma2 by quadrature against its inverse-gamma prior.
inline double quadrature_log_marginal(const RegressionData &data, const Eigen::MatrixXd &K,
                                      const SharedState &shared, double tau2,
                                      const HyperParams &h) {
  const Eigen::MatrixXd C = K + tau2 * data.F * shared.W * data.F.transpose();
  const Eigen::VectorXd mean = data.F * shared.beta0;
  auto log_integrand = [&](double s2) {
    return log_mvn(data.y, mean, s2 * C) +
           log_inverse_gamma_pdf(s2, 0.5 * h.alpha_sigma, 0.5 * h.q_sigma);
  };
  double peak = -std::numeric_limits<double>::infinity();
  for (double t = -30.0; t <= 30.0; t += 0.05) peak = std::max(peak, log_integrand(std::exp(t)));
  boost::math::quadrature::exp_sinh<double> integrator;
  const double value = integrator.integrate(
      [&](double s2) { return std::exp(log_integrand(s2) - peak); }, 1e-14);
  return peak + std::log(value);
}

struct MarginalInstance {
  RegressionData data;
  CorrelationState cs;
  SharedState shared;
  double tau2 = 1.0;
  HyperParams hyper;
};

inline MarginalInstance random_marginal_instance(Rng &rng, Eigen::Index n, Eigen::Index mx) {
  MarginalInstance in;
  const Eigen::MatrixXd X = random_matrix(n, mx, rng);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = 2.0 * draw_normal(rng);
  in.data = RegressionData(X, y);
  in.cs = CorrelationState::make(mx, 0.5, 0.02 + 0.5 * draw_uniform(rng));
  for (Eigen::Index i = 0; i < mx; ++i) in.cs.range(i) = 0.05 + draw_uniform(rng);
  const Eigen::Index m = mx + 1;
  in.hyper = HyperParams::defaults(m);
  in.hyper.alpha_sigma = 2.0 + 4.0 * draw_uniform(rng);
  in.hyper.q_sigma = 0.5 + 5.0 * draw_uniform(rng);
  in.shared.beta0 = Eigen::VectorXd(m);
  for (Eigen::Index i = 0; i < m; ++i) in.shared.beta0(i) = draw_normal(rng);
  in.shared.W = random_spd(m, rng);
  in.tau2 = 0.2 + 2.0 * draw_uniform(rng);
  return in;
}

/// Largest |ours - quadrature| over `count` random instances with n <= 6.
inline double marginal_oracle_error(std::uint64_t seed, int count) {
  Rng rng = make_stream(seed);
  double worst = 0.0;
  for (int t = 0; t < count; ++t) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(draw_index(5, rng));
    const Eigen::Index mx = 1 + static_cast<Eigen::Index>(draw_index(2, rng));
    const auto in = random_marginal_instance(rng, n, mx);
    const auto cm = build_cov(in.data.X, in.cs);
    const double lp = -0.7;
    const double ours = log_marginal_posterior(in.data, cm, in.shared, in.tau2, in.hyper, lp);
    const double oracle =
        quadrature_log_marginal(in.data, cm.matrix(), in.shared, in.tau2, in.hyper) + lp;
    worst = std::max(worst, std::abs(ours - oracle));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Predictive oracle: the kriging equations with C = K + tau2 F W F' formed
// and inverted densely.

inline PointMoments dense_c_form(const Eigen::VectorXd &x, const GPState &state,
                                 const SharedState &shared, const RegressionData &data,
                                 const Eigen::MatrixXd &K, const Eigen::VectorXd &k) {
  const Eigen::MatrixXd &F = data.F;
  const Eigen::MatrixXd Ki = K.inverse();
  const Eigen::MatrixXd Wi = shared.W.inverse();
  const Eigen::MatrixXd V = (F.transpose() * Ki * F + Wi / state.tau2).inverse();
  const Eigen::VectorXd bt = V * (F.transpose() * Ki * data.y + Wi * shared.beta0 / state.tau2);
  Eigen::VectorXd f(x.size() + 1);
  f(0) = 1.0;
  f.tail(x.size()) = x;
  const double mean = f.dot(bt) + k.dot(Ki * (data.y - F * bt));
  const Eigen::MatrixXd C = K + state.tau2 * F * shared.W * F.transpose();
  const Eigen::VectorXd q = k + state.tau2 * F * shared.W * f;
  const double kappa = 1.0 + state.corr.nugget + state.tau2 * f.dot(shared.W * f);
  return {mean, state.sigma2 * (kappa - q.dot(C.inverse() * q))};
}

struct LinearPredictState {
  RegressionData data;
  GPState state;
  SharedState shared;
};

inline LinearPredictState random_linear_state(Rng &rng, Eigen::Index n, Eigen::Index mx) {
  LinearPredictState s;
  const Eigen::MatrixXd X = random_matrix(n, mx, rng);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = 3.0 * draw_normal(rng) + X(i, 0);
  s.data = RegressionData(X, y);
  s.state.corr = CorrelationState::make(mx, 0.5, 0.01 + draw_uniform(rng));
  s.state.corr.active.assign(static_cast<std::size_t>(mx), false);
  s.state.sigma2 = 0.1 + 3.0 * draw_uniform(rng);
  s.state.tau2 = 0.1 + 3.0 * draw_uniform(rng);
  const Eigen::Index m = mx + 1;
  s.state.beta = Eigen::VectorXd::Zero(m);
  s.shared.beta0 = Eigen::VectorXd(m);
  for (Eigen::Index i = 0; i < m; ++i) s.shared.beta0(i) = draw_normal(rng);
  s.shared.W = random_spd(m, rng);
  return s;
}

struct WoodburyResult {
  double mean_rel = 0.0;        // predict_llm vs predict_gp on (1 + g) I
  double var_rel = 0.0;
  double oracle_mean_rel = 0.0; // predict_llm vs the dense C form
  double oracle_var_rel = 0.0;
  int checks = 0;
};

inline double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

inline WoodburyResult woodbury_check(std::uint64_t seed, int states,
                                     std::vector<int> ns = {5, 20, 100},
                                     std::vector<int> ms = {1, 3, 10}) {
  WoodburyResult out;
  Rng rng = make_stream(seed);
  for (int n : ns)
    for (int mx : ms)
      for (int t = 0; t < states; ++t) {
        const auto s = random_linear_state(rng, n, mx);
        const double g = s.state.corr.nugget;
        const Eigen::MatrixXd K = (1.0 + g) * Eigen::MatrixXd::Identity(n, n);
        const auto dense = CovMatrix::factor(K, g);
        if (!dense) throw std::runtime_error("woodbury_check: (1 + g) I failed to factor");
        const Eigen::VectorXd x = random_matrix(mx, 1, rng).col(0) * 1.2 - Eigen::VectorXd::Constant(mx, 0.1);
        const auto llm = predict_llm(x, s.state, s.shared, s.data);
        const auto gp = predict_gp(x, s.state, s.shared, s.data, *dense);
        const auto oracle = dense_c_form(x, s.state, s.shared, s.data, K, Eigen::VectorXd::Zero(n));
        out.mean_rel = std::max(out.mean_rel, rel_err(llm.mean, gp.mean));
        out.var_rel = std::max(out.var_rel, rel_err(llm.variance, gp.variance));
        out.oracle_mean_rel = std::max(out.oracle_mean_rel, rel_err(llm.mean, oracle.mean));
        out.oracle_var_rel = std::max(out.oracle_var_rel, rel_err(llm.variance, oracle.variance));
        ++out.checks;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Forward simulation from the hierarchical prior.

struct PriorDraw {
  GPState state;
  SharedState shared;
};

inline PriorDraw draw_from_prior(const HyperParams &h, const LLMPriorParams &pp,
                                 Eigen::Index input_dims, BooleanMode mode, Rng &rng) {
  PriorDraw d;
  d.state.corr = sample_corr_prior(input_dims, pp, mode, rng);
  d.state.sigma2 = draw_inverse_gamma(0.5 * h.alpha_sigma, 0.5 * h.q_sigma, rng);
  d.state.tau2 = draw_inverse_gamma(0.5 * h.alpha_tau, 0.5 * h.q_tau, rng);
  const Eigen::MatrixXd Winv = draw_wishart(h.rho, (h.rho * h.V).inverse(), rng);
  d.shared.W = Winv.inverse();
  d.shared.W = 0.5 * (d.shared.W + d.shared.W.transpose());
  Eigen::LLT<Eigen::MatrixXd> B(h.B);
  d.shared.beta0 = draw_mvn(h.mu, B.matrixL(), rng);
  Eigen::LLT<Eigen::MatrixXd> W(d.shared.W * d.state.sigma2 * d.state.tau2);
  d.state.beta = draw_mvn(d.shared.beta0, W.matrixL(), rng);
  d.shared.leaf_count = 1;
  return d;
}

/// y ~ N(F beta, sigma2 K) at the given inputs.
inline Eigen::VectorXd draw_response(const RegressionData &design, const GPState &s, Rng &rng) {
  const Eigen::MatrixXd K = dense_correlation(design.X, s.corr);
  const Eigen::MatrixXd cov = s.corr.is_linear()
                                  ? Eigen::MatrixXd((1.0 + s.corr.nugget) *
                                                    Eigen::MatrixXd::Identity(design.n(), design.n()))
                                  : K;
  Eigen::LLT<Eigen::MatrixXd> llt(s.sigma2 * cov);
  return draw_mvn(design.F * s.beta, llt.matrixL(), rng);
}

/// Bounded or log-scale summaries whose first two moments are compared.
inline std::vector<std::pair<std::string, double>> summaries(const GPState &s,
                                                             const SharedState &sh) {
  std::vector<std::pair<std::string, double>> out;
  auto both = [&](const std::string &name, double v) {
    out.emplace_back(name, v);
    out.emplace_back(name + "^2", v * v);
  };
  both("atan beta_1", std::atan(s.beta(0)));
  both("atan beta_2", std::atan(s.beta(1)));
  both("atan beta0_1", std::atan(sh.beta0(0)));
  both("log sigma2", std::log(s.sigma2));
  both("log tau2", std::log(s.tau2));
  both("log W_11", std::log(sh.W(0, 0)));
  both("log g", std::log(s.corr.nugget));
  both("log d", std::log(s.corr.range(0)));
  out.emplace_back("b", s.corr.active[0] ? 1.0 : 0.0);
  return out;
}

struct MomentCheck {
  std::string name;
  double chain_mean = 0.0;
  double reference_mean = 0.0;
  double z = 0.0;
};

/// Standard error of a mean from a correlated series by batch means.
inline double batch_se(const std::vector<double> &xs, int batches = 50) {
  const std::size_t size = xs.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < size; ++i) s += xs[static_cast<std::size_t>(b) * size + i];
    means.push_back(s / static_cast<double>(size));
  }
  double mu = 0.0;
  for (double v : means) mu += v;
  mu /= batches;
  double var = 0.0;
  for (double v : means) var += (v - mu) * (v - mu);
  var /= (batches - 1);
  return std::sqrt(var / batches);
}

inline std::vector<MomentCheck>
compare_moments(const std::vector<std::vector<std::pair<std::string, double>>> &chain,
                const std::vector<std::vector<std::pair<std::string, double>>> &reference) {
  std::vector<MomentCheck> out;
  const std::size_t k = chain.front().size();
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> a, b;
    for (const auto &row : chain) a.push_back(row[j].second);
    for (const auto &row : reference) b.push_back(row[j].second);
    double ma = 0.0, mb = 0.0;
    for (double v : a) ma += v;
    for (double v : b) mb += v;
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    const double se = std::hypot(batch_se(a), batch_se(b));
    out.push_back({chain.front()[j].first, ma, mb, se > 0.0 ? (ma - mb) / se : 0.0});
  }
  return out;
}

/// Small-problem hyperparameters with light enough tails for moment tests.
inline HyperParams validation_hyper() {
  HyperParams h = HyperParams::defaults(2);
  h.B = Eigen::MatrixXd::Identity(2, 2);
  h.rho = 5.0;
  return h;
}

inline std::vector<std::vector<std::pair<std::string, double>>>
forward_prior_summaries(const HyperParams &h, const LLMPriorParams &pp, int draws, Rng &rng) {
  std::vector<std::vector<std::pair<std::string, double>>> out;
  out.reserve(static_cast<std::size_t>(draws));
  for (int i = 0; i < draws; ++i) {
    const auto d = draw_from_prior(h, pp, 1, BooleanMode::Free, rng);
    out.push_back(summaries(d.state, d.shared));
  }
  return out;
}

/// Successive-conditional simulator: sampler sweeps given y alternate with
/// y redrawn from the likelihood at the current parameters.
inline std::vector<MomentCheck> geweke_test(std::uint64_t seed, int iterations, int n = 5) {
  const HyperParams h = validation_hyper();
  const LLMPriorParams pp;
  Rng rng = make_stream(seed, 1);
  Eigen::MatrixXd X(n, 1);
  for (int i = 0; i < n; ++i) X(i, 0) = static_cast<double>(i) / (n - 1);
  const RegressionData design(X, Eigen::VectorXd::Zero(n));
  const auto start = draw_from_prior(h, pp, 1, BooleanMode::Free, rng);
  McmcConfig cfg;
  cfg.adapt = false;
  cfg.seed = seed;
  GpSampler sampler(RegressionData(X, draw_response(design, start.state, rng)), h, pp, cfg);
  sampler.set_state(start.state, start.shared);
  std::vector<std::vector<std::pair<std::string, double>>> chain;
  chain.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    sampler.iterate(false);
    chain.push_back(summaries(sampler.state(), sampler.shared()));
    sampler.set_response(draw_response(design, sampler.state(), rng));
  }
  const auto reference = forward_prior_summaries(h, pp, iterations, rng);
  return compare_moments(chain, reference);
}

/// The full chain with the likelihood switched off must leave the prior
/// invariant.
inline std::vector<MomentCheck> prior_reproduction_test(std::uint64_t seed, int iterations) {
  const HyperParams h = validation_hyper();
  const LLMPriorParams pp;
  Rng rng = make_stream(seed, 2);
  Eigen::MatrixXd X(5, 1);
  for (int i = 0; i < 5; ++i) X(i, 0) = i / 4.0;
  McmcConfig cfg;
  cfg.adapt = false;
  cfg.seed = seed;
  cfg.ignore_likelihood = true;
  GpSampler sampler(RegressionData(X, Eigen::VectorXd::Zero(5)), h, pp, cfg);
  std::vector<std::vector<std::pair<std::string, double>>> chain;
  for (int it = 0; it < 1000; ++it) sampler.iterate(false);
  for (int it = 0; it < iterations; ++it) {
    sampler.iterate(false);
    chain.push_back(summaries(sampler.state(), sampler.shared()));
  }
  const auto reference = forward_prior_summaries(h, pp, iterations, rng);
  return compare_moments(chain, reference);
}

inline double max_abs_z(const std::vector<MomentCheck> &checks) {
  double worst = 0.0;
  for (const auto &c : checks) worst = std::max(worst, std::abs(c.z));
  return worst;
}

// ---------------------------------------------------------------------------
// One-parameter sub-chains against a grid-discretized target.

/// Kolmogorov-Smirnov distance between samples and the distribution with
/// log density `log_target` on (0, inf), discretized on a log grid.
inline double ks_against_grid(std::vector<double> samples,
                              const std::function<double(double)> &log_target, double lo,
                              double hi, int points = 20000) {
  std::vector<double> u(static_cast<std::size_t>(points)), logw(u.size());
  const double a = std::log(lo), b = std::log(hi);
  double peak = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i) {
    u[static_cast<std::size_t>(i)] = a + (b - a) * i / (points - 1);
    const double x = std::exp(u[static_cast<std::size_t>(i)]);
    // Jacobian of x = e^u.
    logw[static_cast<std::size_t>(i)] = log_target(x) + u[static_cast<std::size_t>(i)];
    peak = std::max(peak, logw[static_cast<std::size_t>(i)]);
  }
  std::vector<double> cdf(u.size(), 0.0);
  for (std::size_t i = 1; i < u.size(); ++i)
    cdf[i] = cdf[i - 1] + 0.5 * (std::exp(logw[i - 1] - peak) + std::exp(logw[i] - peak)) *
                              (u[i] - u[i - 1]);
  for (double &c : cdf) c /= cdf.back();
  auto grid_cdf = [&](double x) {
    const double t = std::log(x);
    if (t <= u.front()) return 0.0;
    if (t >= u.back()) return 1.0;
    const auto it = std::upper_bound(u.begin(), u.end(), t);
    const std::size_t j = static_cast<std::size_t>(it - u.begin());
    const double w = (t - u[j - 1]) / (u[j] - u[j - 1]);
    return cdf[j - 1] + w * (cdf[j] - cdf[j - 1]);
  };
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = grid_cdf(samples[i]);
    ks = std::max({ks, std::abs(f - static_cast<double>(i) / n),
                   std::abs(f - static_cast<double>(i + 1) / n)});
  }
  return ks;
}

struct SubchainProblem {
  RegressionData data;
  HyperParams hyper;
  LLMPriorParams prior;
  SharedState shared;
  GPState state;
};

inline SubchainProblem subchain_problem() {
  SubchainProblem p;
  Eigen::MatrixXd X(5, 1);
  X << 0.0, 0.2, 0.45, 0.7, 1.0;
  Eigen::VectorXd y(5);
  y << 0.1, 0.9, 0.4, -0.6, 0.2;
  p.data = RegressionData(X, y);
  p.hyper = HyperParams::defaults(2);
  p.shared = SharedState::initial(p.hyper);
  p.state.corr = CorrelationState::make(1, 0.3, 0.1);
  p.state.tau2 = 1.0;
  p.state.sigma2 = 1.0;
  p.state.beta = Eigen::VectorXd::Zero(2);
  return p;
}

/// The range alone moves, with the plain-GP target log ML(d) + log p(d).
inline double range_subchain_ks(std::uint64_t seed, int iterations) {
  auto p = subchain_problem();
  const LeafContext ctx{p.data, p.shared, p.hyper, p.prior, BooleanMode::AllActive};
  LeafCovariance cur{summarize(p.data, build_cov(p.data.X, p.state.corr)), 0.0};
  cur.log_ml = leaf_log_ml(ctx, cur.summary, p.state.tau2);
  Rng rng = make_stream(seed, 3);
  MoveStats stats;
  const Eigen::VectorXd scale = Eigen::VectorXd::Constant(1, 1.0);
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    mh_update_range(ctx, p.state, cur, scale, rng, stats);
    draws.push_back(p.state.corr.range(0));
  }
  auto target = [&](double d) {
    CorrelationState cs = p.state.corr;
    cs.range(0) = d;
    auto s = try_summarize(p.data, cs);
    if (!s) return -std::numeric_limits<double>::infinity();
    return log_marginal_likelihood(*s, p.shared, p.state.tau2, p.hyper) + log_prior_d(d, p.prior);
  };
  return ks_against_grid(draws, target, 1e-6, 50.0);
}

inline double nugget_subchain_ks(std::uint64_t seed, int iterations) {
  auto p = subchain_problem();
  const LeafContext ctx{p.data, p.shared, p.hyper, p.prior, BooleanMode::AllActive};
  LeafCovariance cur{summarize(p.data, build_cov(p.data.X, p.state.corr)), 0.0};
  cur.log_ml = leaf_log_ml(ctx, cur.summary, p.state.tau2);
  Rng rng = make_stream(seed, 4);
  MoveStats stats;
  std::vector<double> draws;
  draws.reserve(static_cast<std::size_t>(iterations));
  for (int it = 0; it < iterations; ++it) {
    mh_update_nugget(ctx, p.state, cur, 1.5, rng, stats);
    draws.push_back(p.state.corr.nugget);
  }
  auto target = [&](double g) {
    CorrelationState cs = p.state.corr;
    cs.nugget = g;
    auto s = try_summarize(p.data, cs);
    if (!s) return -std::numeric_limits<double>::infinity();
    return log_marginal_likelihood(*s, p.shared, p.state.tau2, p.hyper) + log_prior_g(g, p.prior);
  };
  return ks_against_grid(draws, target, 1e-9, 10.0);
}

} // namespace gpllm::oracle
