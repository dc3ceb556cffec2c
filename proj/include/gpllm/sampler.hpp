#pragma once

// MCMC for the GP LLM. Covariance parameters (d, g, b) move by
// Metropolis-Hastings against the marginal posterior with beta and sigma^2
// integrated out; (sigma^2, beta) are then redrawn jointly from their
// conditional, followed by tau^2 and the shared beta0 and W.

#include "gpllm/kernel.hpp"
#include "gpllm/model.hpp"
#include "gpllm/prior.hpp"
#include "gpllm/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpllm {

enum class MoveKind { Range, Nugget, Boolean, Gibbs };

struct McmcConfig {
  int n_burn = 1000;
  int n_keep = 1000;
  int thin = 1;
  double rw_scale_d = 0.5;
  double rw_scale_g = 0.5;
  bool adapt = true;
  std::uint64_t seed = 1;
  /// Replace the data by an empty design so every move targets the prior.
  bool ignore_likelihood = false;
  std::vector<MoveKind> order{MoveKind::Range, MoveKind::Nugget, MoveKind::Boolean,
                              MoveKind::Gibbs};

  void validate() const {
    if (n_keep < 1) throw std::invalid_argument("McmcConfig: n_keep must be >= 1");
    if (thin < 1) throw std::invalid_argument("McmcConfig: thin must be >= 1");
    if (n_burn < 0) throw std::invalid_argument("McmcConfig: n_burn must be >= 0");
    if (!(rw_scale_d > 0.0 && rw_scale_g > 0.0))
      throw std::invalid_argument("McmcConfig: random-walk scales must be positive");
    if (order.empty()) throw std::invalid_argument("McmcConfig: empty move order");
  }
};

struct MoveStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  double rate() const {
    return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  }
};

struct ChainStats {
  MoveStats range, nugget, boolean;
  std::size_t kept = 0;
  std::size_t kept_llm = 0;
  std::size_t dense_factorizations = 0;
  double llm_fraction() const {
    return kept ? static_cast<double>(kept_llm) / static_cast<double>(kept) : 0.0;
  }
};

struct TraceRecord {
  long iteration = 0;
  GPState state;
  SharedState shared;
  double log_posterior = 0.0;
  bool is_llm = false;
};

struct ChainResult {
  std::vector<TraceRecord> trace;
  ChainStats stats;
};

/// Covariance-dependent quantities for one leaf, or nothing if K is singular.
inline std::optional<CovarianceSummary> try_summarize(const RegressionData &data,
                                                      const CorrelationState &cs) {
  auto cm = try_build_cov(data.X, cs);
  if (!cm) return std::nullopt;
  return summarize(data, *cm);
}

/// Everything a covariance move needs about one leaf.
struct LeafContext {
  const RegressionData &data;
  const SharedState &shared;
  const HyperParams &hyper;
  const LLMPriorParams &prior;
  BooleanMode mode;
};

/// A leaf's correlation parameters with their cached summary and the
/// current log marginal likelihood under the leaf's tau^2 and the shared state.
struct LeafCovariance {
  CovarianceSummary summary;
  double log_ml = 0.0;
};

inline double leaf_log_ml(const LeafContext &ctx, const CovarianceSummary &s,
                          double tau2) {
  return log_marginal_likelihood(s, ctx.shared, tau2, ctx.hyper);
}

inline bool mh_accept(double log_ratio, Rng &rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(draw_uniform(rng)) < log_ratio;
}

/// Log acceptance ratio for moving dimension `dim` of the range to `proposed`
/// under a log random walk. Returns -inf (and no summary) on a singular K.
inline double range_log_ratio(const LeafContext &ctx, const GPState &state,
                              const LeafCovariance &cur, Eigen::Index dim,
                              double proposed,
                              std::optional<CovarianceSummary> &out_summary) {
  const double current = state.corr.range(dim);
  CorrelationState cs = state.corr;
  cs.range(dim) = proposed;
  out_summary = try_summarize(ctx.data, cs);
  if (!out_summary) return -std::numeric_limits<double>::infinity();
  const bool b = state.corr.active[static_cast<std::size_t>(dim)];
  double lr = leaf_log_ml(ctx, *out_summary, state.tau2) - cur.log_ml;
  lr += log_prior_d(proposed, ctx.prior) - log_prior_d(current, ctx.prior);
  if (ctx.mode == BooleanMode::Free)
    lr += log_prob_boolean(b, proposed, ctx.prior) - log_prob_boolean(b, current, ctx.prior);
  lr += std::log(proposed / current);
  return lr;
}

/// One log-random-walk proposal per active dimension. Dimensions already
/// handed to the linear model keep their range untouched.
inline void mh_update_range(const LeafContext &ctx, GPState &state, LeafCovariance &cur,
                            const Eigen::VectorXd &scales, Rng &rng, MoveStats &stats,
                            std::vector<MoveStats> *per_dim = nullptr) {
  for (Eigen::Index i = 0; i < state.corr.dims(); ++i) {
    if (!state.corr.active[static_cast<std::size_t>(i)]) continue;
    const double proposed = state.corr.range(i) * std::exp(scales(i) * draw_normal(rng));
    std::optional<CovarianceSummary> next;
    const double lr = range_log_ratio(ctx, state, cur, i, proposed, next);
    ++stats.proposed;
    if (per_dim) ++(*per_dim)[static_cast<std::size_t>(i)].proposed;
    if (next && mh_accept(lr, rng)) {
      state.corr.range(i) = proposed;
      cur.summary = std::move(*next);
      cur.log_ml = leaf_log_ml(ctx, cur.summary, state.tau2);
      ++stats.accepted;
      if (per_dim) ++(*per_dim)[static_cast<std::size_t>(i)].accepted;
    }
  }
}

inline double nugget_log_ratio(const LeafContext &ctx, const GPState &state,
                               const LeafCovariance &cur, double proposed,
                               std::optional<CovarianceSummary> &out_summary) {
  CorrelationState cs = state.corr;
  cs.nugget = proposed;
  out_summary = try_summarize(ctx.data, cs);
  if (!out_summary) return -std::numeric_limits<double>::infinity();
  double lr = leaf_log_ml(ctx, *out_summary, state.tau2) - cur.log_ml;
  lr += log_prior_g(proposed, ctx.prior) - log_prior_g(state.corr.nugget, ctx.prior);
  lr += std::log(proposed / state.corr.nugget);
  return lr;
}

/// Log random walk on g. Runs under the linear model too, where K = (1 + g) I
/// costs nothing to rebuild.
inline void mh_update_nugget(const LeafContext &ctx, GPState &state, LeafCovariance &cur,
                             double scale, Rng &rng, MoveStats &stats) {
  const double proposed = state.corr.nugget * std::exp(scale * draw_normal(rng));
  std::optional<CovarianceSummary> next;
  const double lr = nugget_log_ratio(ctx, state, cur, proposed, next);
  ++stats.proposed;
  if (next && mh_accept(lr, rng)) {
    state.corr.nugget = proposed;
    cur.summary = std::move(*next);
    cur.log_ml = leaf_log_ml(ctx, cur.summary, state.tau2);
    ++stats.accepted;
  }
}

/// Acceptance ratio for replacing b by `proposed` drawn from p(b | d): the
/// prior and proposal terms cancel, leaving the marginal likelihood ratio.
inline double boolean_log_ratio(const LeafContext &ctx, const GPState &state,
                                const LeafCovariance &cur,
                                const std::vector<bool> &proposed,
                                std::optional<CovarianceSummary> &out_summary) {
  CorrelationState cs = state.corr;
  cs.active = proposed;
  out_summary = try_summarize(ctx.data, cs);
  if (!out_summary) return -std::numeric_limits<double>::infinity();
  return leaf_log_ml(ctx, *out_summary, state.tau2) - cur.log_ml;
}

inline void boolean_jump(const LeafContext &ctx, GPState &state, LeafCovariance &cur,
                         Rng &rng, MoveStats &stats) {
  if (ctx.mode != BooleanMode::Free) return;
  auto proposed = sample_booleans(state.corr.range, ctx.prior, rng);
  ++stats.proposed;
  if (proposed == state.corr.active) {
    ++stats.accepted;
    return;
  }
  std::optional<CovarianceSummary> next;
  const double lr = boolean_log_ratio(ctx, state, cur, proposed, next);
  if (next && mh_accept(lr, rng)) {
    state.corr.active = std::move(proposed);
    cur.summary = std::move(*next);
    cur.log_ml = leaf_log_ml(ctx, cur.summary, state.tau2);
    ++stats.accepted;
  }
}

/// sigma^2 from its beta-marginal conditional, then beta | sigma^2, then tau^2.
inline void draw_leaf_linear(const LeafContext &ctx, GPState &state,
                             const CovarianceSummary &summary, Rng &rng) {
  const auto terms = marginal_terms(summary, ctx.shared, state.tau2);
  const double shape = 0.5 * (ctx.hyper.alpha_sigma + static_cast<double>(summary.n));
  const double scale = 0.5 * (ctx.hyper.q_sigma + terms.psi);
  state.sigma2 = draw_inverse_gamma(shape, scale, rng);
  state.beta = draw_mvn(terms.beta.mean, std::sqrt(state.sigma2) * terms.beta.V_chol, rng);
  const auto tau = tau2_conditional(state.beta, ctx.shared.beta0, ctx.shared.W,
                                    state.sigma2, ctx.hyper);
  state.tau2 = draw_inverse_gamma(tau.shape, tau.scale, rng);
}

/// beta0 then W from their conditionals given every leaf's linear parameters.
inline void draw_shared(SharedState &shared, std::span<const LeafCoefficients> leaves,
                        const HyperParams &hyper, Rng &rng) {
  const auto b0 = beta0_conditional(leaves, shared.W, hyper);
  Eigen::LLT<Eigen::MatrixXd> b0_chol(b0.cov);
  shared.beta0 = draw_mvn(b0.mean, b0_chol.matrixL(), rng);
  const auto wp = wishart_conditional(leaves, shared.beta0, hyper);
  const Eigen::MatrixXd W_inv = draw_wishart(wp.dof, wp.scale, rng);
  shared.W = detail::spd_inverse(W_inv, "W^{-1} draw");
  shared.W = 0.5 * (shared.W + shared.W.transpose());
  shared.leaf_count = static_cast<int>(leaves.size());
}

/// Gibbs block for a stationary fit: (sigma^2, beta), tau^2, beta0, W.
inline void gibbs_sweep(const LeafContext &ctx, GPState &state, SharedState &shared,
                        const CovarianceSummary &summary, Rng &rng) {
  draw_leaf_linear(ctx, state, summary, rng);
  const LeafCoefficients leaf{state.beta, state.sigma2, state.tau2};
  draw_shared(shared, std::span<const LeafCoefficients>(&leaf, 1), ctx.hyper, rng);
}

/// Default starting point: GP regime in every dimension, OLS coefficients.
inline GPState initial_state(const RegressionData &data, const HyperParams &hyper,
                             BooleanMode mode) {
  GPState s;
  s.corr = CorrelationState::make(data.input_dims(), 0.5, 0.1);
  if (mode == BooleanMode::AllLinear)
    s.corr.active.assign(static_cast<std::size_t>(data.input_dims()), false);
  s.tau2 = 1.0;
  s.beta = hyper.mu;
  s.sigma2 = 1.0;
  if (data.n() > data.m()) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(data.FtF);
    if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
      const Eigen::VectorXd b = ldlt.solve(data.Fty);
      if (b.allFinite()) {
        s.beta = b;
        const double rss = (data.y - data.F * b).squaredNorm();
        s.sigma2 = std::max(rss / static_cast<double>(data.n() - data.m()), 1e-12);
      }
    }
  }
  return s;
}

/// Single-partition GP LLM chain. Exposes one iteration at a time so
/// validation harnesses can interleave their own steps.
class GpSampler {
public:
  GpSampler(RegressionData data, HyperParams hyper, LLMPriorParams prior, McmcConfig cfg,
            BooleanMode mode = BooleanMode::Free)
      : data_(std::move(data)), hyper_(std::move(hyper)), prior_(prior),
        cfg_(std::move(cfg)), mode_(mode), rng_(make_stream(cfg_.seed)) {
    hyper_.validate();
    prior_.validate();
    cfg_.validate();
    if (hyper_.m() != data_.m())
      throw std::invalid_argument("GpSampler: hyperparameter size does not match design");
    if (cfg_.ignore_likelihood) data_ = RegressionData::empty(data_.input_dims());
    range_scale_ = Eigen::VectorXd::Constant(data_.input_dims(), cfg_.rw_scale_d);
    nugget_scale_ = cfg_.rw_scale_g;
    range_window_.assign(static_cast<std::size_t>(data_.input_dims()), MoveStats{});
    set_state(initial_state(data_, hyper_, mode_), SharedState::initial(hyper_));
  }

  /// Installs a state; grows the nugget up to ten times if K is singular.
  void set_state(GPState state, SharedState shared) {
    state_ = std::move(state);
    shared_ = std::move(shared);
    shared_.leaf_count = 1;
    for (int attempt = 0; attempt < 10; ++attempt) {
      if (auto s = try_summarize(data_, state_.corr)) {
        cur_.summary = std::move(*s);
        refresh_log_ml();
        return;
      }
      state_.corr.nugget *= 2.0;
    }
    throw std::runtime_error("GpSampler: no valid starting covariance found");
  }

  /// Swaps in new responses at the same inputs.
  void set_response(const Eigen::VectorXd &y) {
    data_ = RegressionData(data_.X, y);
    set_state(state_, shared_);
  }

  void iterate(bool adapting) {
    const LeafContext ctx{data_, shared_, hyper_, prior_, mode_};
    for (MoveKind kind : cfg_.order) {
      switch (kind) {
      case MoveKind::Range:
        refresh_log_ml();
        mh_update_range(ctx, state_, cur_, range_scale_, rng_, stats_.range, &range_window_);
        break;
      case MoveKind::Nugget:
        refresh_log_ml();
        ++nugget_window_.proposed;
        {
          const auto before = stats_.nugget.accepted;
          mh_update_nugget(ctx, state_, cur_, nugget_scale_, rng_, stats_.nugget);
          nugget_window_.accepted += stats_.nugget.accepted - before;
        }
        break;
      case MoveKind::Boolean:
        refresh_log_ml();
        boolean_jump(ctx, state_, cur_, rng_, stats_.boolean);
        break;
      case MoveKind::Gibbs:
        gibbs_sweep(ctx, state_, shared_, cur_.summary, rng_);
        break;
      }
    }
    refresh_log_ml();
    ++iteration_;
    if (adapting && cfg_.adapt && iteration_ % 50 == 0) adapt_scales();
  }

  TraceRecord record() const {
    return {iteration_, state_, shared_, log_posterior(), state_.corr.is_linear()};
  }

  double log_posterior() const {
    return cur_.log_ml + log_prior_corr(state_.corr, prior_, mode_);
  }

  const GPState &state() const { return state_; }
  const SharedState &shared() const { return shared_; }
  const RegressionData &data() const { return data_; }
  const CovarianceSummary &summary() const { return cur_.summary; }
  const ChainStats &stats() const { return stats_; }
  ChainStats &stats() { return stats_; }
  Rng &rng() { return rng_; }
  const Eigen::VectorXd &range_scales() const { return range_scale_; }

private:
  void refresh_log_ml() {
    const LeafContext ctx{data_, shared_, hyper_, prior_, mode_};
    cur_.log_ml = leaf_log_ml(ctx, cur_.summary, state_.tau2);
  }

  static double adapt_one(double scale, const MoveStats &w) {
    if (w.proposed < 10) return scale;
    const double r = w.rate();
    if (r < 0.2) return scale * 0.8;
    if (r > 0.4) return scale * 1.25;
    return scale;
  }

  void adapt_scales() {
    for (Eigen::Index i = 0; i < range_scale_.size(); ++i) {
      auto &w = range_window_[static_cast<std::size_t>(i)];
      range_scale_(i) = adapt_one(range_scale_(i), w);
      if (w.proposed >= 10) w = MoveStats{};
    }
    nugget_scale_ = adapt_one(nugget_scale_, nugget_window_);
    if (nugget_window_.proposed >= 10) nugget_window_ = MoveStats{};
  }

  RegressionData data_;
  HyperParams hyper_;
  LLMPriorParams prior_;
  McmcConfig cfg_;
  BooleanMode mode_;
  Rng rng_;
  GPState state_;
  SharedState shared_;
  LeafCovariance cur_;
  ChainStats stats_;
  Eigen::VectorXd range_scale_;
  double nugget_scale_ = 0.5;
  std::vector<MoveStats> range_window_;
  MoveStats nugget_window_;
  long iteration_ = 0;
};

/// Burn-in, then keep every `thin`-th state until n_keep records exist.
inline ChainResult run_chain(const RegressionData &data, const HyperParams &hyper,
                             const LLMPriorParams &prior, const McmcConfig &cfg,
                             BooleanMode mode = BooleanMode::Free) {
  const auto dense_before = op_counters().dense_factorizations;
  GpSampler sampler(data, hyper, prior, cfg, mode);
  for (int it = 0; it < cfg.n_burn; ++it) sampler.iterate(true);
  ChainResult out;
  out.trace.reserve(static_cast<std::size_t>(cfg.n_keep));
  for (int k = 0; k < cfg.n_keep; ++k) {
    for (int t = 0; t < cfg.thin; ++t) sampler.iterate(false);
    out.trace.push_back(sampler.record());
    if (!std::isfinite(out.trace.back().log_posterior))
      throw std::runtime_error("run_chain: non-finite log posterior");
  }
  out.stats = sampler.stats();
  out.stats.kept = out.trace.size();
  for (const auto &r : out.trace) out.stats.kept_llm += r.is_llm ? 1 : 0;
  out.stats.dense_factorizations = op_counters().dense_factorizations - dense_before;
  return out;
}

} // namespace gpllm
