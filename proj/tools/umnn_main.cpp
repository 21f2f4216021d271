// umnn: train, evaluate, sample, and visualize UMNN-MAF density estimators.

#include <cstdio>
#include <cstdlib>
#include <string>

#include <CLI11.hpp>

#include "umnn/umnn.hpp"

namespace {

// Loads eval/sample input data: a toy dataset name (generated and
// standardized on its own statistics) or a CSV of points used as-is.
umnn::Matrix load_eval_data(const std::string& dataset, const std::string& csv,
                            std::size_t n, std::uint64_t seed) {
  if (!csv.empty()) return umnn::read_points_csv(csv);
  umnn::Matrix pts = umnn::sample_toy(umnn::toy_from_string(dataset), n, seed);
  const auto stats = umnn::standardize_fit(pts);
  umnn::standardize_apply(pts, stats);
  return pts;
}

// Expands `--config FILE` into the equivalent long flags: each `key=value`
// line becomes `--key value`, appended only when the flag was not already
// given explicitly, so command-line flags win over the file.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      break;
    }
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw umnn::IoError("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw umnn::ConfigError("config file '" + path + "' line " +
                              std::to_string(lineno) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (!given) {
      args.push_back(flag);
      args.push_back(value);
    }
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unconstrained monotonic neural network flows"};
  app.require_subcommand(1);

  umnn::RunConfig cfg;
  std::string model_path, csv_path, out_path, pgm_path;
  std::size_t n_samples = 1000;
  double temperature = 1.0;
  int steps = 100;
  double xmin = -4.0, xmax = 4.0, ymin = -4.0, ymax = 4.0;
  int resolution = 200;

  auto add_seed = [](CLI::App* cmd, std::uint64_t& slot) {
    cmd->add_option("--seed", slot, "random seed")->envname("UMNN_SEED");
  };

  std::string config_path;
  auto* train = app.add_subcommand("train", "fit a flow to a toy dataset or CSV");
  train->add_option("--config", config_path, "flat key=value configuration file");
  train->add_option("--dataset", cfg.dataset, "toy dataset name");
  train->add_option("--csv", cfg.csv_path, "train on points from this CSV instead");
  train->add_option("--n", cfg.n_points, "number of generated toy points");
  train->add_option("--flows", cfg.flows, "number of stacked transformations");
  train->add_option("--emb-layers", cfg.emb_layers, "embedding net hidden layers");
  train->add_option("--emb-width", cfg.emb_width, "embedding net hidden width");
  train->add_option("--int-layers", cfg.int_layers, "integrand net hidden layers");
  train->add_option("--int-width", cfg.int_width, "integrand net hidden width");
  train->add_option("--q", cfg.q, "embedding size per dimension");
  std::string steps_policy = "50";
  train->add_option("--steps", steps_policy,
                    "integration steps during training: a number, or 'rand' for "
                    "uniform in [20, 100] per batch");
  train->add_option("--eval-steps", cfg.eval_steps, "integration steps for evaluation");
  train->add_option("--lr", cfg.lr, "Adam learning rate");
  train->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay");
  train->add_option("--batch", cfg.batch, "minibatch size");
  train->add_option("--epochs", cfg.epochs, "training epochs");
  train->add_option("--valid-frac", cfg.valid_frac, "validation split fraction");
  train->add_option("--outdir", cfg.outdir, "output directory for model and metrics");
  add_seed(train, cfg.seed);

  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "mean NLL of a dataset under a saved model");
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--dataset", cfg.dataset, "toy dataset name");
  eval->add_option("--csv", csv_path, "evaluate points from this CSV");
  eval->add_option("--n", n_samples, "number of generated toy points");
  eval->add_option("--steps", steps, "integration steps");
  add_seed(eval, eval_seed);

  std::uint64_t sample_seed = 0;
  auto* sample = app.add_subcommand("sample", "draw samples by numerical inversion");
  sample->add_option("--model", model_path, "model file")->required();
  sample->add_option("--n", n_samples, "number of samples");
  sample->add_option("--temperature", temperature, "base-noise variance scale");
  sample->add_option("--out", out_path, "output CSV")->required();
  sample->add_option("--steps", steps, "integration steps for inversion");
  add_seed(sample, sample_seed);

  auto* grid = app.add_subcommand("density-grid", "log-density grid over a rectangle");
  grid->add_option("--model", model_path, "model file")->required();
  grid->add_option("--xmin", xmin);
  grid->add_option("--xmax", xmax);
  grid->add_option("--ymin", ymin);
  grid->add_option("--ymax", ymax);
  grid->add_option("--resolution", resolution, "cells per axis");
  grid->add_option("--steps", steps, "integration steps");
  grid->add_option("--out", out_path, "output CSV of log-densities")->required();
  grid->add_option("--pgm", pgm_path, "optional 8-bit PGM heatmap");

  std::vector<std::string> expanded;
  try {
    expanded = expand_config(argc, argv);
  } catch (const umnn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::vector<char*> cargs;
  cargs.reserve(expanded.size());
  for (auto& a : expanded) cargs.push_back(a.data());
  CLI11_PARSE(app, static_cast<int>(cargs.size()), cargs.data());

  try {
    if (train->parsed()) {
      if (steps_policy == "rand") {
        cfg.steps_rand = true;
      } else {
        cfg.steps_rand = false;
        try {
          cfg.steps = std::stoi(steps_policy);
        } catch (const std::exception&) {
          throw umnn::ConfigError("--steps expects an integer or 'rand', got '" +
                                  steps_policy + "'");
        }
      }
      const auto outcome = umnn::train_model(cfg);
      std::printf("best_valid_nll %.6f (epoch %d)\n", outcome.best_valid_nll,
                  outcome.best_epoch);
      std::printf("model   %s\n", outcome.model_path.c_str());
      std::printf("metrics %s\n", outcome.metrics_path.c_str());
    } else if (eval->parsed()) {
      const umnn::FlowModel model = umnn::load_model(model_path);
      const umnn::Matrix data = load_eval_data(cfg.dataset, csv_path, n_samples, eval_seed);
      if (data.cols() != static_cast<std::size_t>(model.d))
        throw umnn::DimensionError("eval: data dimension " + std::to_string(data.cols()) +
                                   " does not match model dimension " +
                                   std::to_string(model.d));
      std::printf("%.6f\n", umnn::eval_mean_nll(model, data, steps));
    } else if (sample->parsed()) {
      const umnn::FlowModel model = umnn::load_model(model_path);
      umnn::Matrix pts(0, static_cast<std::size_t>(model.d));
      if (n_samples > 0)
        pts = umnn::model_sample(model, n_samples, temperature, sample_seed, 1e-6, steps);
      umnn::write_points_csv(out_path, pts);
      std::printf("wrote %zu samples to %s\n", pts.rows(), out_path.c_str());
    } else if (grid->parsed()) {
      const umnn::FlowModel model = umnn::load_model(model_path);
      const umnn::Matrix g =
          umnn::density_grid(model, xmin, xmax, ymin, ymax, resolution, steps);
      umnn::write_grid_csv(out_path, g);
      if (!pgm_path.empty()) umnn::write_grid_pgm(pgm_path, g);
      std::printf("wrote %dx%d grid to %s\n", resolution, resolution, out_path.c_str());
    }
  } catch (const umnn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
