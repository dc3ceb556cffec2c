#pragma once

// Experiment configuration read from YAML. Unknown keys are errors.
//
//   model: gpllm                # gp | gpllm | treed-gpllm | lm
//   seed: 1
//   replicates: 1
//   data:   {source: friedman, n: 100, noise_sd: 1.0, path: ..., response: y,
//            standardize_response: false}
//   hyper:  {B_scale: 1000, V_scale: 1, rho: 12, alpha_sigma: 5, q_sigma: 10,
//            alpha_tau: 5, q_tau: 10}
//   prior:  {gamma: 10, theta1: 0.2, theta2: 0.95, g_rate: 10,
//            d_mix: [[1, 20, 0.5], [10, 10, 0.5]]}
//   mcmc:   {n_burn: 1000, n_keep: 1000, thin: 1, rw_scale_d: 0.5,
//            rw_scale_g: 0.5, adapt: true}
//   tree:   {alpha: 0.5, beta: 2, min_leaf: 10, max_depth: 12, lm_init: true,
//            stable_window: 500, init_max_iterations: 20000}
//   query:  {source: training}  # training | holdout | grid | csv
//   explore: {d_min: 0.001, d_max: 2, d_count: 40, g: [0, 0.001, 0.01, 0.1, 1]}
//   output: {trace: true, predictions: true}

#include "gpllm/model.hpp"
#include "gpllm/prior.hpp"
#include "gpllm/sampler.hpp"
#include "gpllm/treed.hpp"

#include <yaml-cpp/yaml.h>

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpllm {

class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string &what) : std::runtime_error(what) {}
};

enum class ModelKind { GP, GPLLM, TreedGPLLM, LM };

inline ModelKind parse_model(const std::string &s) {
  if (s == "gp") return ModelKind::GP;
  if (s == "gpllm") return ModelKind::GPLLM;
  if (s == "treed-gpllm") return ModelKind::TreedGPLLM;
  if (s == "lm") return ModelKind::LM;
  throw ConfigError("unknown model '" + s + "' (expected gp, gpllm, treed-gpllm or lm)");
}

inline std::string model_name(ModelKind k) {
  switch (k) {
  case ModelKind::GP: return "gp";
  case ModelKind::GPLLM: return "gpllm";
  case ModelKind::TreedGPLLM: return "treed-gpllm";
  case ModelKind::LM: return "lm";
  }
  return "?";
}

struct DataConfig {
  std::string source = "linear";   // csv | linear | exp2d | friedman
  std::string path;
  std::string response = "y";
  int n = 10;
  std::optional<double> noise_sd;
  bool standardize_response = false;
};

/// Scalar overrides applied on top of HyperParams::defaults(m).
struct HyperConfig {
  double B_scale = 1000.0;
  double V_scale = 1.0;
  std::optional<double> rho;
  double alpha_sigma = 5.0, q_sigma = 10.0;
  double alpha_tau = 5.0, q_tau = 10.0;

  HyperParams build(Eigen::Index m) const {
    HyperParams h = HyperParams::defaults(m);
    h.B *= B_scale / 1000.0;
    h.V *= V_scale;
    if (rho) h.rho = *rho;
    h.alpha_sigma = alpha_sigma;
    h.q_sigma = q_sigma;
    h.alpha_tau = alpha_tau;
    h.q_tau = q_tau;
    h.validate();
    return h;
  }
};

struct TreeConfig {
  TreePriorParams prior;
  bool min_leaf_set = false;
  bool lm_init = true;
  LmInitOptions init;
};

struct QueryConfig {
  std::string source = "training";  // training | holdout | grid | csv
  int grid_size = 21;               // points per dimension for `grid`
  std::string path;
};

struct ExploreConfig {
  double d_min = 1e-3, d_max = 2.0;
  int d_count = 40;
  std::vector<double> g{0.0, 1e-3, 1e-2, 0.1, 1.0};
};

struct OutputConfig {
  bool trace = true;
  bool predictions = true;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::GPLLM;
  std::uint64_t seed = 1;
  int replicates = 1;
  DataConfig data;
  HyperConfig hyper;
  LLMPriorParams prior;
  McmcConfig mcmc;
  TreeConfig tree;
  QueryConfig query;
  ExploreConfig explore;
  OutputConfig output;
};

namespace detail {

inline void check_keys(const YAML::Node &node, const std::string &where,
                       const std::set<std::string> &allowed) {
  if (!node.IsMap()) throw ConfigError(where + ": expected a mapping");
  for (const auto &kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T> void read(const YAML::Node &node, const char *key, T &out,
                             const std::string &where) {
  if (!node[key]) return;
  try {
    out = node[key].as<T>();
  } catch (const YAML::Exception &) {
    throw ConfigError(where + "." + key + ": bad value");
  }
}

template <class T> void read_opt(const YAML::Node &node, const char *key,
                                 std::optional<T> &out, const std::string &where) {
  if (!node[key]) return;
  T v{};
  read(node, key, v, where);
  out = v;
}

} // namespace detail

inline ExperimentConfig parse_config(const YAML::Node &root) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig cfg;
  if (!root || root.IsNull()) return cfg;
  check_keys(root, "config",
             {"model", "seed", "replicates", "data", "hyper", "prior", "mcmc", "tree",
              "query", "explore", "output"});
  if (root["model"]) cfg.model = parse_model(root["model"].as<std::string>());
  read(root, "seed", cfg.seed, "config");
  read(root, "replicates", cfg.replicates, "config");
  if (cfg.replicates < 1) throw ConfigError("config.replicates must be >= 1");

  if (const auto n = root["data"]) {
    check_keys(n, "data", {"source", "path", "response", "n", "noise_sd",
                           "standardize_response"});
    read(n, "source", cfg.data.source, "data");
    read(n, "path", cfg.data.path, "data");
    read(n, "response", cfg.data.response, "data");
    read(n, "n", cfg.data.n, "data");
    detail::read_opt(n, "noise_sd", cfg.data.noise_sd, "data");
    read(n, "standardize_response", cfg.data.standardize_response, "data");
  }
  static const std::set<std::string> sources{"csv", "linear", "exp2d", "friedman"};
  if (!sources.count(cfg.data.source))
    throw ConfigError("data.source: unknown source '" + cfg.data.source + "'");
  if (cfg.data.source == "csv" && cfg.data.path.empty())
    throw ConfigError("data.path is required for csv data");

  if (const auto n = root["hyper"]) {
    check_keys(n, "hyper", {"B_scale", "V_scale", "rho", "alpha_sigma", "q_sigma",
                            "alpha_tau", "q_tau"});
    read(n, "B_scale", cfg.hyper.B_scale, "hyper");
    read(n, "V_scale", cfg.hyper.V_scale, "hyper");
    detail::read_opt(n, "rho", cfg.hyper.rho, "hyper");
    read(n, "alpha_sigma", cfg.hyper.alpha_sigma, "hyper");
    read(n, "q_sigma", cfg.hyper.q_sigma, "hyper");
    read(n, "alpha_tau", cfg.hyper.alpha_tau, "hyper");
    read(n, "q_tau", cfg.hyper.q_tau, "hyper");
  }

  if (const auto n = root["prior"]) {
    check_keys(n, "prior", {"gamma", "theta1", "theta2", "g_rate", "d_mix"});
    read(n, "gamma", cfg.prior.gamma, "prior");
    read(n, "theta1", cfg.prior.theta1, "prior");
    read(n, "theta2", cfg.prior.theta2, "prior");
    read(n, "g_rate", cfg.prior.g_rate, "prior");
    if (const auto mix = n["d_mix"]) {
      if (!mix.IsSequence() || mix.size() != 2)
        throw ConfigError("prior.d_mix: expected two [shape, rate, weight] triples");
      for (std::size_t k = 0; k < 2; ++k) {
        const auto t = mix[k];
        if (!t.IsSequence() || t.size() != 3)
          throw ConfigError("prior.d_mix: expected [shape, rate, weight]");
        cfg.prior.d_mix[k] = {t[0].as<double>(), t[1].as<double>(), t[2].as<double>()};
      }
    }
  }
  try {
    cfg.prior.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(e.what());
  }

  if (const auto n = root["mcmc"]) {
    check_keys(n, "mcmc", {"n_burn", "n_keep", "thin", "rw_scale_d", "rw_scale_g", "adapt"});
    read(n, "n_burn", cfg.mcmc.n_burn, "mcmc");
    read(n, "n_keep", cfg.mcmc.n_keep, "mcmc");
    read(n, "thin", cfg.mcmc.thin, "mcmc");
    read(n, "rw_scale_d", cfg.mcmc.rw_scale_d, "mcmc");
    read(n, "rw_scale_g", cfg.mcmc.rw_scale_g, "mcmc");
    read(n, "adapt", cfg.mcmc.adapt, "mcmc");
  }
  try {
    cfg.mcmc.validate();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(e.what());
  }

  if (const auto n = root["tree"]) {
    check_keys(n, "tree", {"alpha", "beta", "min_leaf", "max_depth", "lm_init",
                           "stable_window", "init_max_iterations"});
    read(n, "alpha", cfg.tree.prior.alpha, "tree");
    read(n, "beta", cfg.tree.prior.beta, "tree");
    if (n["min_leaf"]) {
      read(n, "min_leaf", cfg.tree.prior.min_leaf, "tree");
      cfg.tree.min_leaf_set = true;
    }
    read(n, "max_depth", cfg.tree.prior.max_depth, "tree");
    read(n, "lm_init", cfg.tree.lm_init, "tree");
    read(n, "stable_window", cfg.tree.init.stable_window, "tree");
    read(n, "init_max_iterations", cfg.tree.init.max_iterations, "tree");
    try {
      cfg.tree.prior.validate();
    } catch (const std::invalid_argument &e) {
      throw ConfigError(e.what());
    }
  }

  if (const auto n = root["query"]) {
    check_keys(n, "query", {"source", "grid_size", "path"});
    read(n, "source", cfg.query.source, "query");
    read(n, "grid_size", cfg.query.grid_size, "query");
    read(n, "path", cfg.query.path, "query");
    static const std::set<std::string> q{"training", "holdout", "grid", "csv"};
    if (!q.count(cfg.query.source))
      throw ConfigError("query.source: unknown source '" + cfg.query.source + "'");
  }

  if (const auto n = root["explore"]) {
    check_keys(n, "explore", {"d_min", "d_max", "d_count", "g"});
    read(n, "d_min", cfg.explore.d_min, "explore");
    read(n, "d_max", cfg.explore.d_max, "explore");
    read(n, "d_count", cfg.explore.d_count, "explore");
    read(n, "g", cfg.explore.g, "explore");
    if (!(cfg.explore.d_min > 0.0 && cfg.explore.d_max >= cfg.explore.d_min &&
          cfg.explore.d_count >= 1))
      throw ConfigError("explore: need 0 < d_min <= d_max and d_count >= 1");
  }

  if (const auto n = root["output"]) {
    check_keys(n, "output", {"trace", "predictions"});
    read(n, "trace", cfg.output.trace, "output");
    read(n, "predictions", cfg.output.predictions, "output");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string &path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception &e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(root);
}

inline ExperimentConfig parse_config_string(const std::string &text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception &e) {
    throw ConfigError(e.what());
  }
}

} // namespace gpllm
