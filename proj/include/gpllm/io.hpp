#pragma once

// Output formats.
//
// Trace: one JSON object per line and kept iteration, keys in this order:
//   stationary: iteration, log_posterior, is_llm, beta, sigma2, tau2,
//               d, g, b, p, beta0, W
//   treed:      iteration, log_posterior, leaves, llm_area, beta0, W, tree
// where tree is {"split_dim", "split_value", "left", "right"} for internal
// nodes and {"leaf_id", "beta", "sigma2", "tau2", "d", "g", "b", "p"} for
// leaves. split_dim is 1-based; split values are on the scaled inputs.
//
// Report: "key = value" lines, '#' starts a comment.
// Tables: CSV with a header row.

#include "gpllm/experiment.hpp"
#include "gpllm/explore.hpp"
#include "gpllm/predict.hpp"
#include "gpllm/sampler.hpp"
#include "gpllm/treed.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpllm {

using ordered_json = nlohmann::ordered_json;

namespace detail {

inline ordered_json to_json(const Eigen::VectorXd &v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline ordered_json to_json(const Eigen::MatrixXd &M) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) a.push_back(to_json(Eigen::VectorXd(M.row(i))));
  return a;
}

inline Eigen::VectorXd vector_from(const ordered_json &a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from(const ordered_json &a) {
  if (a.empty()) return {};
  Eigen::MatrixXd M(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(a[0].size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    M.row(static_cast<Eigen::Index>(i)) = vector_from(a[i]).transpose();
  return M;
}

inline void put_state(ordered_json &j, const GPState &s) {
  j["beta"] = to_json(s.beta);
  j["sigma2"] = s.sigma2;
  j["tau2"] = s.tau2;
  j["d"] = to_json(s.corr.range);
  j["g"] = s.corr.nugget;
  ordered_json b = ordered_json::array();
  for (bool v : s.corr.active) b.push_back(v ? 1 : 0);
  j["b"] = b;
  j["p"] = to_json(s.corr.power);
}

inline GPState get_state(const ordered_json &j) {
  GPState s;
  s.beta = vector_from(j.at("beta"));
  s.sigma2 = j.at("sigma2").get<double>();
  s.tau2 = j.at("tau2").get<double>();
  s.corr.range = vector_from(j.at("d"));
  s.corr.nugget = j.at("g").get<double>();
  for (const auto &v : j.at("b")) s.corr.active.push_back(v.get<int>() != 0);
  s.corr.power = j.contains("p") ? vector_from(j.at("p"))
                                 : Eigen::VectorXd::Constant(s.corr.range.size(), 2.0);
  s.corr.validate();
  return s;
}

inline ordered_json tree_to_json(const TreeNode &n, int &leaf_id) {
  ordered_json j;
  if (n.is_leaf()) {
    j["leaf_id"] = leaf_id++;
    put_state(j, n.leaf);
    return j;
  }
  j["split_dim"] = n.split_dim + 1;
  j["split_value"] = n.split_value;
  j["left"] = tree_to_json(*n.left, leaf_id);
  j["right"] = tree_to_json(*n.right, leaf_id);
  return j;
}

inline std::unique_ptr<TreeNode> tree_from_json(const ordered_json &j, int depth) {
  auto n = std::make_unique<TreeNode>();
  n->depth = depth;
  if (j.contains("leaf_id")) {
    n->leaf = get_state(j);
    return n;
  }
  n->split_dim = j.at("split_dim").get<int>() - 1;
  n->split_value = j.at("split_value").get<double>();
  n->left = tree_from_json(j.at("left"), depth + 1);
  n->right = tree_from_json(j.at("right"), depth + 1);
  return n;
}

} // namespace detail

inline std::string trace_line(const TraceRecord &r) {
  ordered_json j;
  j["iteration"] = r.iteration;
  j["log_posterior"] = r.log_posterior;
  j["is_llm"] = r.is_llm;
  detail::put_state(j, r.state);
  j["beta0"] = detail::to_json(r.shared.beta0);
  j["W"] = detail::to_json(r.shared.W);
  return j.dump();
}

inline std::string trace_line(const TreedRecord &r) {
  ordered_json j;
  j["iteration"] = r.iteration;
  j["log_posterior"] = r.log_posterior;
  j["leaves"] = r.leaves;
  j["llm_area"] = r.llm_area;
  j["beta0"] = detail::to_json(r.model.shared.beta0);
  j["W"] = detail::to_json(r.model.shared.W);
  int leaf_id = 0;
  j["tree"] = detail::tree_to_json(*r.model.root, leaf_id);
  return j.dump();
}

template <class Record>
void write_trace(const std::string &path, const std::vector<Record> &trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto &r : trace) out << trace_line(r) << '\n';
}

/// Either kind of trace, detected from the first record.
struct LoadedTrace {
  std::vector<TraceRecord> stationary;
  std::vector<TreedRecord> treed;
  bool is_treed() const { return !treed.empty(); }
};

inline LoadedTrace read_trace(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  LoadedTrace out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = ordered_json::parse(line);
      SharedState shared{detail::vector_from(j.at("beta0")), detail::matrix_from(j.at("W")), 1};
      if (j.contains("tree")) {
        TreedRecord r;
        r.iteration = j.at("iteration").get<long>();
        r.log_posterior = j.at("log_posterior").get<double>();
        r.model.root = detail::tree_from_json(j.at("tree"), 0);
        r.leaves = r.model.leaf_count();
        shared.leaf_count = r.leaves;
        r.model.shared = shared;
        r.llm_area = j.value("llm_area", 0.0);
        out.treed.push_back(std::move(r));
      } else {
        TraceRecord r;
        r.iteration = j.at("iteration").get<long>();
        r.log_posterior = j.at("log_posterior").get<double>();
        r.state = detail::get_state(j);
        r.shared = shared;
        r.is_llm = r.state.corr.is_linear();
        out.stationary.push_back(std::move(r));
      }
    } catch (const std::exception &e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.stationary.empty() && out.treed.empty())
    throw std::runtime_error(path + ": empty trace");
  if (!out.stationary.empty() && !out.treed.empty())
    throw std::runtime_error(path + ": mixed stationary and treed records");
  return out;
}

inline void write_surface_csv(std::ostream &os, const SurfaceTable &t) {
  os << "d,g,loglik,logpost,stable\n" << std::setprecision(12);
  auto row = [&](const SurfaceCell &c) {
    os << c.d << ',' << c.g << ',' << c.loglik << ',' << c.logpost << ','
       << (c.stable ? 1 : 0) << '\n';
  };
  for (const auto &c : t.llm_row) row(c);
  for (const auto &c : t.cells) row(c);
}

inline void write_predictions_csv(std::ostream &os, const Eigen::MatrixXd &X,
                                  const PredictiveMoments &p,
                                  const std::vector<std::string> &names = {}) {
  for (Eigen::Index j = 0; j < X.cols(); ++j)
    os << (j < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(j)]
                                                       : "x" + std::to_string(j + 1))
       << ',';
  os << "mean,variance,q05,q95\n" << std::setprecision(12);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) os << X(i, j) << ',';
    os << p.mean(i) << ',' << p.variance(i) << ',' << p.lower(i) << ',' << p.upper(i) << '\n';
  }
}

inline void write_dataset_csv(std::ostream &os, const Dataset &ds,
                              const Eigen::VectorXd &truth = {}) {
  for (Eigen::Index j = 0; j < ds.input_dims(); ++j)
    os << (j < static_cast<Eigen::Index>(ds.names.size()) ? ds.names[static_cast<std::size_t>(j)]
                                                         : "x" + std::to_string(j + 1))
       << ',';
  os << 'y';
  if (truth.size()) os << ",mu";
  os << '\n' << std::setprecision(15);
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    for (Eigen::Index j = 0; j < ds.input_dims(); ++j) os << ds.X_raw(i, j) << ',';
    os << ds.y_raw(i);
    if (truth.size()) os << ',' << truth(i);
    os << '\n';
  }
}

namespace detail {

template <class T> std::string join(const std::vector<T> &v) {
  std::ostringstream os;
  os << std::setprecision(6);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

inline std::string join(const Eigen::VectorXd &v) {
  return join(std::vector<double>(v.data(), v.data() + v.size()));
}

} // namespace detail

/// Key-value report for an experiment.
inline void write_report(std::ostream &os, const ExperimentReport &rep) {
  const auto &cfg = rep.config;
  os << std::setprecision(6);
  os << "# gpllm experiment report\n";
  os << "model = " << model_name(cfg.model) << '\n';
  os << "data.source = " << cfg.data.source << '\n';
  os << "seed = " << cfg.seed << '\n';
  os << "replicates = " << cfg.replicates << '\n';
  os << "mcmc.n_burn = " << cfg.mcmc.n_burn << '\n';
  os << "mcmc.n_keep = " << cfg.mcmc.n_keep << '\n';
  os << "mcmc.thin = " << cfg.mcmc.thin << '\n';
  os << "summary.rmse_mean = " << rep.mean_of(&ReplicateReport::rmse) << '\n';
  os << "summary.llm_fraction_mean = " << rep.mean_of(&ReplicateReport::llm_fraction) << '\n';
  if (cfg.model == ModelKind::TreedGPLLM)
    os << "summary.llm_area_mean = " << rep.mean_of(&ReplicateReport::llm_area) << '\n';
  os << "summary.seconds = " << rep.seconds << '\n';
  for (const auto &r : rep.replicates) {
    const std::string p = "replicate." + std::to_string(r.replicate) + ".";
    os << p << "seed = " << r.seed << '\n';
    os << p << "rmse = " << r.rmse << '\n';
    os << p << "llm_fraction = " << r.llm_fraction << '\n';
    os << p << "boolean_freq = " << detail::join(r.boolean_freq) << '\n';
    os << p << "boolean_mode = " << detail::join(r.boolean_mode) << '\n';
    os << p << "boolean_mode_share = " << r.boolean_mode_share << '\n';
    if (r.beta.mean.size()) {
      os << p << "beta.q05 = " << detail::join(r.beta.q05) << '\n';
      os << p << "beta.mean = " << detail::join(r.beta.mean) << '\n';
      os << p << "beta.q95 = " << detail::join(r.beta.q95) << '\n';
    }
    os << p << "accept.range = " << r.acceptance.range << '\n';
    os << p << "accept.nugget = " << r.acceptance.nugget << '\n';
    os << p << "accept.boolean = " << r.acceptance.boolean << '\n';
    if (cfg.model == ModelKind::TreedGPLLM) {
      os << p << "accept.grow = " << r.acceptance.grow << '\n';
      os << p << "accept.prune = " << r.acceptance.prune << '\n';
      os << p << "accept.change = " << r.acceptance.change << '\n';
      os << p << "accept.swap = " << r.acceptance.swap << '\n';
      os << p << "llm_area = " << r.llm_area << '\n';
      os << p << "leaf_mode = " << r.leaf_mode << '\n';
      os << p << "init_leaves = " << r.init_leaves << '\n';
    }
    os << p << "dense_factorizations = " << r.dense_factorizations << '\n';
    os << p << "seconds = " << r.seconds << '\n';
  }
}

} // namespace gpllm
