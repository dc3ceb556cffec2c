// Command-line front end: fit, predict, explore, simulate, bench.

#include "gpllm/gpllm.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace gpllm;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output = ".";
  std::string model;
};

ExperimentConfig resolve(const Common &c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.model.empty()) cfg.model = parse_model(c.model);
  return cfg;
}

fs::path out_dir(const Common &c) {
  fs::path p(c.output);
  fs::create_directories(p);
  return p;
}

std::ofstream open_out(const fs::path &p) {
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

void warn(const Dataset &ds) {
  for (const auto &w : ds.warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_fit(const Common &c) {
  ExperimentConfig cfg = resolve(c);
  cfg.replicates = 1;
  const auto dir = out_dir(c);
  ExperimentReport rep;
  rep.config = cfg;
  Fit fit = fit_replicate(cfg, 0);
  warn(fit.syn.data);
  rep.replicates.push_back(fit.report);
  rep.seconds = fit.report.seconds;
  {
    auto os = open_out(dir / "report.txt");
    write_report(os, rep);
  }
  if (cfg.output.trace) {
    if (fit.chain) write_trace((dir / "trace.jsonl").string(), fit.chain->trace);
    if (fit.treed) write_trace((dir / "trace.jsonl").string(), fit.treed->trace);
  }
  if (cfg.output.predictions) {
    auto os = open_out(dir / "predictions.csv");
    write_predictions_csv(os, fit.queries.X, fit.predictions, fit.syn.data.names);
  }
  write_report(std::cout, rep);
  return 0;
}

int cmd_predict(const Common &c, const std::string &trace_path) {
  const ExperimentConfig cfg = resolve(c);
  const auto dir = out_dir(c);
  const Synthetic syn = load_data(cfg.data, cfg.seed);
  warn(syn.data);
  const RegressionData data = syn.data.regression();
  const QuerySet q = make_queries(cfg.query, syn);
  const Eigen::MatrixXd Q = syn.data.scale_inputs(q.X);
  LoadedTrace trace = read_trace(trace_path);
  PredictiveMoments p;
  if (trace.is_treed()) {
    for (auto &r : trace.treed) attach_data(r.model, data);
    p = treed_predict(trace.treed, Q);
  } else {
    p = aggregate_predictions(trace.stationary, data, Q);
  }
  p = detail::unscale_predictions(std::move(p), syn.data.response);
  auto os = open_out(dir / "predictions.csv");
  write_predictions_csv(os, q.X, p, syn.data.names);
  std::cout << "predictions = " << (dir / "predictions.csv").string() << '\n'
            << "llm_weight = " << p.llm_weight << '\n';
  if (q.truth.size() == p.mean.size() && q.truth.size() > 0)
    std::cout << "rmse = " << rmse(p.mean, q.truth) << '\n';
  return 0;
}

int cmd_explore(const Common &c) {
  const ExperimentConfig cfg = resolve(c);
  const auto dir = out_dir(c);
  const Synthetic syn = load_data(cfg.data, cfg.seed);
  warn(syn.data);
  const RegressionData data = syn.data.regression();
  const auto d_grid = log_grid(cfg.explore.d_min, cfg.explore.d_max, cfg.explore.d_count);
  const auto table = explore_surfaces(data, d_grid, cfg.explore.g,
                                      cfg.hyper.build(data.m()), cfg.prior);
  auto os = open_out(dir / "surface.csv");
  write_surface_csv(os, table);
  std::cout << "surface = " << (dir / "surface.csv").string() << '\n'
            << "lm_loglik = " << table.lm_loglik << '\n'
            << "likelihood_ratio = " << table.likelihood_ratio() << '\n';
  return 0;
}

int cmd_simulate(const Common &c) {
  const ExperimentConfig cfg = resolve(c);
  if (cfg.data.source == "csv") throw ConfigError("simulate needs a synthetic data source");
  const auto dir = out_dir(c);
  const Synthetic syn = load_data(cfg.data, cfg.seed);
  auto os = open_out(dir / "data.csv");
  write_dataset_csv(os, syn.data, syn.truth);
  std::cout << "data = " << (dir / "data.csv").string() << '\n';
  return 0;
}

int cmd_bench(const Common &c, std::optional<int> replicates) {
  ExperimentConfig cfg = resolve(c);
  if (replicates) cfg.replicates = *replicates;
  const auto dir = out_dir(c);
  const auto rep = run_experiment(cfg);
  auto os = open_out(dir / "report.txt");
  write_report(os, rep);
  write_report(std::cout, rep);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Bayesian GP regression with jumps to the limiting linear model"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App *sub) {
    sub->add_option("--config", common.config, "YAML experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_option("--output", common.output, "Output directory");
    sub->add_option("--model", common.model, "Model variant")
        ->check(CLI::IsMember({"gp", "gpllm", "treed-gpllm", "lm"}));
  };

  auto *fit = app.add_subcommand("fit", "Run one chain and write report, trace and predictions");
  add_common(fit);
  auto *predict = app.add_subcommand("predict", "Predict from a saved trace");
  add_common(predict);
  std::string trace_path;
  predict->add_option("--trace", trace_path, "Trace file written by fit")
      ->required()
      ->check(CLI::ExistingFile);
  auto *explore = app.add_subcommand("explore", "Likelihood and posterior surfaces over (d, g)");
  add_common(explore);
  auto *simulate = app.add_subcommand("simulate", "Write a synthetic dataset as CSV");
  add_common(simulate);
  auto *bench = app.add_subcommand("bench", "Replicated experiment with summary report");
  add_common(bench);
  std::optional<int> replicates;
  bench->add_option("--replicates", replicates, "Override the replicate count")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*fit) return cmd_fit(common);
    if (*predict) return cmd_predict(common, trace_path);
    if (*explore) return cmd_explore(common);
    if (*simulate) return cmd_simulate(common);
    if (*bench) return cmd_bench(common, replicates);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
