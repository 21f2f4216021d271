#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "umnn/flow.hpp"
#include "umnn/serialize.hpp"
#include "umnn/toy_data.hpp"

namespace umnn {

// Everything a training run needs. Defaults follow the 2D-toy configuration:
// one flow, 4x50 embedding and integrand nets, embedding size 10, 50
// integration steps, Adam at 1e-3 with weight decay 1e-5, batches of 100.
struct RunConfig {
  std::string dataset = "eight_gaussians";  // toy name, or a CSV path via csv_path
  std::string csv_path;
  std::size_t n_points = 20000;
  int flows = 1;
  int emb_layers = 4;
  int emb_width = 50;
  int int_layers = 4;
  int int_width = 50;
  int q = 10;
  int steps = 50;           // fixed integration steps during training...
  bool steps_rand = false;  // ...or drawn uniformly from [20, 100] per batch
  int eval_steps = 100;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int batch = 100;
  int epochs = 150;
  double valid_frac = 0.1;
  std::uint64_t seed = 0;
  std::string outdir = ".";

  std::vector<int> made_hidden() const { return std::vector<int>(emb_layers, emb_width); }
  std::vector<int> integrand_hidden() const { return std::vector<int>(int_layers, int_width); }
};

inline void validate_config(const RunConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (c.csv_path.empty() && !is_toy_name(c.dataset))
    fail("dataset", "unknown toy dataset '" + c.dataset + "'");
  if (c.csv_path.empty() && c.n_points < 2) fail("n", "need at least two samples");
  if (c.flows < 1) fail("flows", "must be >= 1");
  if (c.emb_layers < 0 || c.int_layers < 0) fail("layers", "must be >= 0");
  if ((c.emb_layers > 0 && c.emb_width < 1) || (c.int_layers > 0 && c.int_width < 1))
    fail("width", "must be >= 1");
  if (c.q < 1) fail("q", "must be >= 1");
  if (c.steps < 2) fail("steps", "need at least 2 integration steps");
  if (c.eval_steps < 2) fail("eval-steps", "need at least 2 integration steps");
  if (!(c.lr > 0.0)) fail("lr", "must be positive");
  if (c.weight_decay < 0.0) fail("weight-decay", "must be >= 0");
  if (c.batch < 1) fail("batch", "must be >= 1");
  if (c.epochs < 0) fail("epochs", "must be >= 0");
  if (c.valid_frac <= 0.0 || c.valid_frac >= 1.0) fail("valid-frac", "must be in (0, 1)");
}

// Loads the configured dataset (toy generator or CSV), split and standardized.
inline Dataset load_dataset(const RunConfig& c) {
  Matrix raw;
  if (!c.csv_path.empty())
    raw = read_points_csv(c.csv_path);
  else
    raw = sample_toy(toy_from_string(c.dataset), c.n_points, c.seed);
  return make_dataset(raw, c.valid_frac, c.seed);
}

// Mean NLL of the data under the model, evaluated in fixed-size chunks so
// the quadrature batches stay at a reasonable memory footprint.
inline double eval_mean_nll(const FlowModel& model, const Matrix& data, int steps,
                            std::size_t chunk = 128) {
  const std::size_t n = data.rows();
  if (n == 0) throw ConfigError("eval_mean_nll: empty data");
  double acc = 0.0;
  Matrix block;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t rows = std::min(chunk, n - start);
    block.resize(rows, data.cols());
    for (std::size_t j = 0; j < rows; ++j)
      for (std::size_t c = 0; c < data.cols(); ++c) block(j, c) = data(start + j, c);
    const Matrix lp = log_density(model, block, steps);
    for (std::size_t j = 0; j < rows; ++j) acc -= lp(j, 0);
  }
  return acc / static_cast<double>(n);
}

struct TrainOutcome {
  double best_valid_nll = 0.0;
  int best_epoch = 0;
  std::string model_path;
  std::string metrics_path;
};

// Minibatch Adam on the NLL. Per epoch: seeded shuffle, optional per-batch
// resampling of the integration step count, then a train/valid evaluation
// logged as one CSV line. The best-validation model is kept on disk; a
// non-finite loss aborts with that checkpoint retained.
inline TrainOutcome train_model(const RunConfig& cfg, FlowModel* final_model = nullptr) {
  validate_config(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.outdir);

  const Dataset ds = load_dataset(cfg);
  const Matrix train = ds.train();
  const Matrix valid = ds.valid();
  if (train.rows() == 0 || valid.rows() == 0)
    throw DataError("train_model: empty train or validation split");
  const int d = static_cast<int>(train.cols());

  FlowModel model = make_flow_model(d, cfg.flows, cfg.made_hidden(), cfg.integrand_hidden(),
                                    cfg.q, mix_seed(cfg.seed, 0x0de1));

  std::vector<AdamState> opt(2 * model.steps.size());
  for (auto& st : opt) {
    st.lr = cfg.lr;
    st.weight_decay = cfg.weight_decay;
  }

  TrainOutcome out;
  out.model_path = (fs::path(cfg.outdir) / "model.umnn").string();
  out.metrics_path = (fs::path(cfg.outdir) / "metrics.csv").string();

  std::ofstream metrics(out.metrics_path);
  if (!metrics) throw IoError("cannot open '" + out.metrics_path + "' for writing");
  metrics << "epoch,train_nll,valid_nll,wall_ms\n";

  Rng shuffle_rng(mix_seed(cfg.seed, 0x5b0f));
  Rng steps_rng(mix_seed(cfg.seed, 0x57e9));

  char line[160];
  auto log_epoch = [&](int epoch, double train_nll, double valid_nll, long wall_ms) {
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%ld\n", epoch, train_nll, valid_nll,
                  wall_ms);
    metrics << line;
    metrics.flush();
  };

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - t0)
        .count();
  };

  if (cfg.epochs == 0) {
    save_model(out.model_path, model);
    const double train_nll = eval_mean_nll(model, train, cfg.eval_steps);
    const double valid_nll = eval_mean_nll(model, valid, cfg.eval_steps);
    log_epoch(0, train_nll, valid_nll, elapsed_ms());
    out.best_valid_nll = valid_nll;
    out.best_epoch = 0;
    if (final_model) *final_model = model;
    return out;
  }

  std::vector<int> order(train.rows());
  for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);

  double best = std::numeric_limits<double>::infinity();
  bool saved_any = false;
  Matrix batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t rows =
          std::min(static_cast<std::size_t>(cfg.batch), order.size() - start);
      batch.resize(rows, train.cols());
      for (std::size_t j = 0; j < rows; ++j)
        for (std::size_t c = 0; c < train.cols(); ++c)
          batch(j, c) = train(static_cast<std::size_t>(order[start + j]), c);

      const int n_steps = cfg.steps_rand ? steps_rng.uniform_int(20, 100) : cfg.steps;
      double loss;
      try {
        loss = nll_loss_and_grads(model, batch, n_steps);
        for (std::size_t k = 0; k < model.steps.size(); ++k) {
          adam_step(model.steps[k].made.params, opt[2 * k]);
          adam_step(model.steps[k].block.integrand, opt[2 * k + 1]);
        }
      } catch (const NumericError& e) {
        throw NumericError(std::string("training aborted at epoch ") +
                           std::to_string(epoch) + " (last good checkpoint kept): " +
                           e.what());
      }
      epoch_loss += loss;
      ++n_batches;
    }

    const double train_nll = epoch_loss / static_cast<double>(n_batches);
    const double valid_nll = eval_mean_nll(model, valid, cfg.eval_steps);
    log_epoch(epoch, train_nll, valid_nll, elapsed_ms());

    if (valid_nll < best) {
      best = valid_nll;
      out.best_epoch = epoch;
      save_model(out.model_path, model);
      saved_any = true;
    }
  }
  if (!saved_any) save_model(out.model_path, model);
  out.best_valid_nll = best;
  if (final_model) *final_model = model;
  return out;
}

// Log-density on a res x res grid of cell centers over the rectangle.
// Row r corresponds to y descending from ymax (image convention), column c
// to x ascending from xmin.
inline Matrix density_grid(const FlowModel& model, double xmin, double xmax, double ymin,
                           double ymax, int resolution, int steps) {
  if (model.d != 2) throw ConfigError("density_grid: model must be 2-dimensional");
  if (resolution < 2) throw ConfigError("density_grid: resolution must be >= 2");
  if (!(xmax > xmin) || !(ymax > ymin))
    throw ConfigError("density_grid: empty rectangle");

  const double dx = (xmax - xmin) / resolution;
  const double dy = (ymax - ymin) / resolution;
  Matrix grid(resolution, resolution);

  const std::size_t chunk = 128;
  Matrix pts;
  std::vector<std::pair<int, int>> cells;
  std::size_t filled = 0;
  auto flush = [&](std::size_t count) {
    if (count == 0) return;
    pts.resize(count, 2);
    for (std::size_t t = 0; t < count; ++t) {
      const auto [r, c] = cells[t];
      pts(t, 0) = xmin + (c + 0.5) * dx;
      pts(t, 1) = ymax - (r + 0.5) * dy;
    }
    const Matrix lp = log_density(model, pts, steps);
    for (std::size_t t = 0; t < count; ++t) grid(cells[t].first, cells[t].second) = lp(t, 0);
  };

  cells.resize(chunk);
  for (int r = 0; r < resolution; ++r)
    for (int c = 0; c < resolution; ++c) {
      cells[filled++] = {r, c};
      if (filled == chunk) {
        flush(filled);
        filled = 0;
      }
    }
  flush(filled);
  return grid;
}

// Plain CSV matrix of log-densities, row-major, 17 significant digits.
inline void write_grid_csv(const std::string& path, const Matrix& grid) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  char buf[40];
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", grid(r, c));
      if (c) out << ",";
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

// 8-bit binary PGM heatmap: densities exp(log p) mapped linearly from
// [min, max] onto [0, 255].
inline void write_grid_pgm(const std::string& path, const Matrix& grid) {
  double pmin = std::numeric_limits<double>::infinity();
  double pmax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double p = std::exp(grid[i]);
    pmin = std::min(pmin, p);
    pmax = std::max(pmax, p);
  }
  const double span = pmax - pmin;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n" << grid.cols() << " " << grid.rows() << "\n255\n";
  std::vector<unsigned char> row(grid.cols());
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      const double p = std::exp(grid(r, c));
      const double scaled = span > 0.0 ? (p - pmin) / span : 0.0;
      row[c] = static_cast<unsigned char>(std::lround(scaled * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace umnn
