#pragma once

// Experiment driver: data, chain(s), prediction and scoring for one config,
// with replicates spread over a worker pool.

#include "gpllm/config.hpp"
#include "gpllm/csv.hpp"
#include "gpllm/dataset.hpp"
#include "gpllm/generators.hpp"
#include "gpllm/predict.hpp"
#include "gpllm/sampler.hpp"
#include "gpllm/treed.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace gpllm {

inline double rmse(const Eigen::VectorXd &predicted, const Eigen::VectorXd &truth) {
  if (predicted.size() != truth.size() || truth.size() == 0)
    throw std::invalid_argument("rmse: size mismatch or empty");
  return std::sqrt((predicted - truth).squaredNorm() / static_cast<double>(truth.size()));
}

/// Worker count: GPLLM_WORKERS if set, else the hardware concurrency.
inline int worker_count() {
  if (const char *env = std::getenv("GPLLM_WORKERS")) {
    const int w = std::atoi(env);
    if (w >= 1) return w;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(0..count-1) on a pool; the first exception is rethrown.
inline void parallel_for(int count, const std::function<void(int)> &fn, int workers = 0) {
  if (workers <= 0) workers = worker_count();
  workers = std::min(workers, count);
  if (workers <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto &t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline Synthetic load_data(const DataConfig &dc, std::uint64_t seed) {
  if (dc.source == "csv") {
    DatasetOptions opt;
    opt.standardize_response = dc.standardize_response;
    return {ingest_csv(dc.path, dc.response, opt), {}, {}, {}};
  }
  Synthetic s;
  if (dc.source == "linear") s = gen_linear(dc.n, seed, dc.noise_sd.value_or(1.0));
  else if (dc.source == "exp2d") s = gen_exp2d(dc.n, seed, dc.noise_sd.value_or(0.001));
  else if (dc.source == "friedman") s = gen_friedman(dc.n, seed, dc.noise_sd.value_or(1.0));
  else throw ConfigError("unknown data source '" + dc.source + "'");
  if (dc.standardize_response) {
    DatasetOptions opt;
    opt.bounds = s.data.raw_bounds();
    opt.standardize_response = true;
    opt.names = s.data.names;
    s.data = make_dataset(s.data.X_raw, s.data.y_raw, opt);
  }
  return s;
}

/// Query inputs in raw units, with the noiseless truth where known.
struct QuerySet {
  Eigen::MatrixXd X;
  Eigen::VectorXd truth;
};

inline QuerySet make_queries(const QueryConfig &qc, const Synthetic &syn) {
  const Dataset &ds = syn.data;
  if (qc.source == "training") return {ds.X_raw, syn.truth};
  if (qc.source == "holdout") {
    if (syn.holdout_X.rows() == 0) throw ConfigError("query.source holdout: data has no holdout");
    return {syn.holdout_X, syn.holdout_truth};
  }
  if (qc.source == "csv") {
    Eigen::MatrixXd X = read_csv(qc.path).values;
    if (X.cols() != ds.input_dims()) throw ConfigError("query csv: column count mismatch");
    return {X, {}};
  }
  const int k = qc.grid_size;
  const auto dims = ds.input_dims();
  if (k < 2 || dims > 3) throw ConfigError("query grid: need grid_size >= 2 and at most 3 inputs");
  Eigen::Index total = 1;
  for (Eigen::Index j = 0; j < dims; ++j) total *= k;
  Eigen::MatrixXd S(total, dims);
  for (Eigen::Index r = 0; r < total; ++r) {
    Eigen::Index rem = r;
    for (Eigen::Index j = dims - 1; j >= 0; --j) {
      S(r, j) = static_cast<double>(rem % k) / (k - 1);
      rem /= k;
    }
  }
  return {ds.unscale_inputs(S), {}};
}

struct Quantiles {
  Eigen::VectorXd q05, mean, q95;
};

inline Quantiles column_quantiles(const std::vector<Eigen::VectorXd> &samples) {
  Quantiles q;
  if (samples.empty()) return q;
  const auto p = samples.front().size();
  q.q05.resize(p);
  q.mean.resize(p);
  q.q95.resize(p);
  std::vector<double> col(samples.size());
  for (Eigen::Index j = 0; j < p; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      col[i] = samples[i](j);
      s += col[i];
    }
    std::sort(col.begin(), col.end());
    auto at = [&](double prob) {
      const double pos = prob * static_cast<double>(col.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, col.size() - 1);
      return col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]);
    };
    q.q05(j) = at(0.05);
    q.q95(j) = at(0.95);
    q.mean(j) = s / static_cast<double>(col.size());
  }
  return q;
}

struct Acceptance {
  double range = 0, nugget = 0, boolean = 0;
  double grow = 0, prune = 0, change = 0, swap = 0;
};

struct ReplicateReport {
  int replicate = 0;
  std::uint64_t seed = 0;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double llm_fraction = 0.0;
  std::vector<double> boolean_freq;     // posterior P(b_i = 1)
  std::vector<int> boolean_mode;
  double boolean_mode_share = 0.0;
  Quantiles beta;                       // original units, intercept first
  Acceptance acceptance;
  double llm_area = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> llm_area_samples;
  int leaf_mode = 1;
  int init_leaves = 0;
  double seconds = 0.0;
  std::size_t dense_factorizations = 0;
};

/// A fitted replicate: data, chain output and predictions on the raw scale.
struct Fit {
  Synthetic syn;
  RegressionData data;
  std::optional<ChainResult> chain;
  std::optional<TreedChainResult> treed;
  Eigen::VectorXd ols_beta;             // scaled-input coefficients (LM)
  double ols_sigma2 = 0.0;
  QuerySet queries;
  PredictiveMoments predictions;        // original response scale
  ReplicateReport report;
};

namespace detail {

inline PredictiveMoments unscale_predictions(PredictiveMoments p, const ResponseMap &r) {
  for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
    p.mean(i) = r.unscale(p.mean(i));
    p.variance(i) = r.unscale_variance(p.variance(i));
    p.lower(i) = r.unscale(p.lower(i));
    p.upper(i) = r.unscale(p.upper(i));
  }
  return p;
}

inline void boolean_summary(const std::vector<std::vector<bool>> &bs, std::size_t dims,
                            ReplicateReport &rep) {
  rep.boolean_freq.assign(dims, 0.0);
  std::map<std::vector<bool>, std::size_t> counts;
  for (const auto &b : bs) {
    for (std::size_t i = 0; i < dims; ++i) rep.boolean_freq[i] += b[i] ? 1.0 : 0.0;
    ++counts[b];
  }
  for (auto &f : rep.boolean_freq) f /= static_cast<double>(std::max<std::size_t>(bs.size(), 1));
  std::size_t best = 0;
  std::vector<bool> mode(dims, false);
  for (const auto &[b, c] : counts)
    if (c > best) {
      best = c;
      mode = b;
    }
  rep.boolean_mode.clear();
  for (bool v : mode) rep.boolean_mode.push_back(v ? 1 : 0);
  rep.boolean_mode_share = bs.empty() ? 0.0 : static_cast<double>(best) / static_cast<double>(bs.size());
}

} // namespace detail

/// One replicate of the configured experiment.
inline Fit fit_replicate(const ExperimentConfig &cfg, int replicate) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(replicate);
  Fit fit;
  fit.syn = load_data(cfg.data, seed);
  const Dataset &ds = fit.syn.data;
  fit.data = ds.regression();
  fit.queries = make_queries(cfg.query, fit.syn);
  const Eigen::MatrixXd Q = ds.scale_inputs(fit.queries.X);
  const auto dims = static_cast<std::size_t>(ds.input_dims());
  const HyperParams hyper = cfg.hyper.build(fit.data.m());
  McmcConfig mcfg = cfg.mcmc;
  mcfg.seed = seed;
  ReplicateReport &rep = fit.report;
  rep.replicate = replicate;
  rep.seed = seed;
  const auto dense_before = op_counters().dense_factorizations;

  switch (cfg.model) {
  case ModelKind::LM: {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(fit.data.FtF);
    fit.ols_beta = ldlt.solve(fit.data.Fty);
    const Eigen::VectorXd r = fit.data.y - fit.data.F * fit.ols_beta;
    const double dof = std::max<double>(1.0, static_cast<double>(fit.data.n() - fit.data.m()));
    fit.ols_sigma2 = r.squaredNorm() / dof;
    const Eigen::MatrixXd Fq = RegressionData::design(Q);
    const Eigen::MatrixXd FtFi = ldlt.solve(Eigen::MatrixXd::Identity(fit.data.m(), fit.data.m()));
    PredictiveMoments p;
    p.mean = Fq * fit.ols_beta;
    p.variance = fit.ols_sigma2 *
                 (1.0 + ((Fq * FtFi).array() * Fq.array()).rowwise().sum()).matrix();
    p.lower = p.mean - 1.6448536269514722 * p.variance.cwiseSqrt();
    p.upper = p.mean + 1.6448536269514722 * p.variance.cwiseSqrt();
    p.llm_weight = 1.0;
    fit.predictions = detail::unscale_predictions(std::move(p), ds.response);
    rep.llm_fraction = 1.0;
    rep.boolean_freq.assign(dims, 0.0);
    rep.boolean_mode.assign(dims, 0);
    rep.boolean_mode_share = 1.0;
    const Eigen::VectorXd b = ds.unscale_coefficients(fit.ols_beta);
    rep.beta = {b, b, b};
    break;
  }
  case ModelKind::GP:
  case ModelKind::GPLLM: {
    const BooleanMode mode = cfg.model == ModelKind::GP ? BooleanMode::AllActive : BooleanMode::Free;
    fit.chain = run_chain(fit.data, hyper, cfg.prior, mcfg, mode);
    const auto &ch = *fit.chain;
    fit.predictions = detail::unscale_predictions(
        aggregate_predictions(ch.trace, fit.data, Q), ds.response);
    rep.llm_fraction = ch.stats.llm_fraction();
    std::vector<std::vector<bool>> bs;
    std::vector<Eigen::VectorXd> betas;
    for (const auto &r : ch.trace) {
      bs.push_back(r.state.corr.active);
      betas.push_back(ds.unscale_coefficients(r.state.beta));
    }
    detail::boolean_summary(bs, dims, rep);
    rep.beta = column_quantiles(betas);
    rep.acceptance.range = ch.stats.range.rate();
    rep.acceptance.nugget = ch.stats.nugget.rate();
    rep.acceptance.boolean = ch.stats.boolean.rate();
    break;
  }
  case ModelKind::TreedGPLLM: {
    TreePriorParams tp = cfg.tree.prior;
    if (!cfg.tree.min_leaf_set) tp.min_leaf = TreePriorParams::defaults(fit.data.m()).min_leaf;
    fit.treed = run_treed_chain(fit.data, hyper, cfg.prior, tp, mcfg, BooleanMode::Free,
                                cfg.tree.lm_init, cfg.tree.init);
    auto &tr = *fit.treed;
    fit.predictions = detail::unscale_predictions(treed_predict(tr.trace, Q), ds.response);
    const auto area = llm_area(tr.trace, Box::unit(ds.input_dims()));
    rep.llm_area = area.mean;
    rep.llm_area_samples = area.per_sample;
    std::vector<std::vector<bool>> bs;
    std::map<int, int> leaf_counts;
    std::size_t linear_leaves = 0, total_leaves = 0;
    for (const auto &r : tr.trace) {
      ++leaf_counts[r.leaves];
      for (const TreeNode *leaf : r.model.leaves()) {
        bs.push_back(leaf->leaf.corr.active);
        linear_leaves += leaf->leaf.corr.is_linear() ? 1 : 0;
        ++total_leaves;
      }
    }
    rep.llm_fraction = static_cast<double>(linear_leaves) / static_cast<double>(total_leaves);
    detail::boolean_summary(bs, dims, rep);
    int best = 0;
    for (const auto &[k, c] : leaf_counts)
      if (c > best) {
        best = c;
        rep.leaf_mode = k;
      }
    rep.init_leaves = tr.init_leaves;
    rep.acceptance.range = tr.stats.range.rate();
    rep.acceptance.nugget = tr.stats.nugget.rate();
    rep.acceptance.boolean = tr.stats.boolean.rate();
    rep.acceptance.grow = tr.stats.tree.grow.rate();
    rep.acceptance.prune = tr.stats.tree.prune.rate();
    rep.acceptance.change = tr.stats.tree.change.rate();
    rep.acceptance.swap = tr.stats.tree.swap.rate();
    break;
  }
  }
  if (fit.queries.truth.size() == fit.predictions.mean.size() && fit.queries.truth.size() > 0)
    rep.rmse = rmse(fit.predictions.mean, fit.queries.truth);
  rep.dense_factorizations = op_counters().dense_factorizations - dense_before;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return fit;
}

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<ReplicateReport> replicates;
  double seconds = 0.0;

  double mean_of(double ReplicateReport::*field) const {
    double s = 0.0;
    int k = 0;
    for (const auto &r : replicates)
      if (std::isfinite(r.*field)) {
        s += r.*field;
        ++k;
      }
    return k ? s / k : std::numeric_limits<double>::quiet_NaN();
  }
};

/// Replicates in parallel; `keep` (optional) sees every fit before it is
/// discarded, from the worker thread that produced it.
inline ExperimentReport run_experiment(const ExperimentConfig &cfg,
                                       const std::function<void(Fit &)> &keep = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport out;
  out.config = cfg;
  out.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  std::mutex keep_mutex;
  parallel_for(cfg.replicates, [&](int r) {
    Fit fit = fit_replicate(cfg, r);
    out.replicates[static_cast<std::size_t>(r)] = fit.report;
    if (keep) {
      std::lock_guard lock(keep_mutex);
      keep(fit);
    }
  });
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

} // namespace gpllm
