#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "umnn/matrix.hpp"
#include "umnn/rng.hpp"

namespace umnn {

enum class ToyName { eight_gaussians, two_spirals, checkerboard, two_moons, pinwheel };

inline ToyName toy_from_string(const std::string& name) {
  if (name == "eight_gaussians") return ToyName::eight_gaussians;
  if (name == "two_spirals") return ToyName::two_spirals;
  if (name == "checkerboard") return ToyName::checkerboard;
  if (name == "two_moons") return ToyName::two_moons;
  if (name == "pinwheel") return ToyName::pinwheel;
  throw ConfigError("unknown toy dataset '" + name + "'");
}

inline bool is_toy_name(const std::string& name) {
  return name == "eight_gaussians" || name == "two_spirals" || name == "checkerboard" ||
         name == "two_moons" || name == "pinwheel";
}

// Frozen generator constants. Acceptance checks measure samples against
// these values, so they double as the documented ground truth.
namespace toy_constants {
inline constexpr double eight_gaussians_radius = 2.0;
inline constexpr double eight_gaussians_sigma = 0.3;
inline constexpr double spiral_noise = 0.1;
inline constexpr double moons_noise = 0.1;
inline constexpr double pinwheel_radial_std = 0.3;
inline constexpr double pinwheel_tangential_std = 0.1;
inline constexpr double pinwheel_rate = 0.25;
inline constexpr int pinwheel_classes = 5;
}  // namespace toy_constants

// Mode centers of the eight-Gaussians mixture: a radius-2 circle sampled at
// 45 degree spacing.
inline std::vector<std::array<double, 2>> eight_gaussian_means() {
  std::vector<std::array<double, 2>> means;
  for (int k = 0; k < 8; ++k) {
    const double a = kTwoPi * k / 8.0;
    means.push_back({toy_constants::eight_gaussians_radius * std::cos(a),
                     toy_constants::eight_gaussians_radius * std::sin(a)});
  }
  return means;
}

namespace detail {

inline void sample_eight_gaussians(Rng& rng, Matrix& pts) {
  const auto means = eight_gaussian_means();
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    const auto& m = means[rng.below(8)];
    pts(j, 0) = m[0] + toy_constants::eight_gaussians_sigma * rng.normal();
    pts(j, 1) = m[1] + toy_constants::eight_gaussians_sigma * rng.normal();
  }
}

inline void sample_two_spirals(Rng& rng, Matrix& pts) {
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    const double theta = std::sqrt(rng.uniform()) * 540.0 * (kPi / 180.0);
    const double sign = rng.below(2) == 0 ? 1.0 : -1.0;
    const double px = (-std::cos(theta) * theta + rng.uniform() * 0.5) / 3.0;
    const double py = (std::sin(theta) * theta + rng.uniform() * 0.5) / 3.0;
    pts(j, 0) = sign * px + toy_constants::spiral_noise * rng.normal();
    pts(j, 1) = sign * py + toy_constants::spiral_noise * rng.normal();
  }
}

inline void sample_checkerboard(Rng& rng, Matrix& pts) {
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    const double x1 = rng.uniform() * 4.0 - 2.0;
    const double parity = static_cast<double>(
        ((static_cast<long>(std::floor(x1)) % 2) + 2) % 2);
    const double x2 = rng.uniform() - static_cast<double>(rng.below(2)) * 2.0 + parity;
    pts(j, 0) = 2.0 * x1;
    pts(j, 1) = 2.0 * x2;
  }
}

inline void sample_two_moons(Rng& rng, Matrix& pts) {
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    const double t = kPi * rng.uniform();
    double px, py;
    if (rng.below(2) == 0) {
      px = std::cos(t);
      py = std::sin(t);
    } else {
      px = 1.0 - std::cos(t);
      py = 0.5 - std::sin(t);
    }
    px += toy_constants::moons_noise * rng.normal();
    py += toy_constants::moons_noise * rng.normal();
    pts(j, 0) = 2.0 * px - 1.0;
    pts(j, 1) = 2.0 * py - 0.2;
  }
}

inline void sample_pinwheel(Rng& rng, Matrix& pts) {
  using namespace toy_constants;
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    const auto c = rng.below(static_cast<std::uint64_t>(pinwheel_classes));
    const double r = 1.0 + pinwheel_radial_std * rng.normal();
    const double tq = pinwheel_tangential_std * rng.normal();
    const double angle = kTwoPi * static_cast<double>(c) / pinwheel_classes +
                         pinwheel_rate * std::exp(r);
    pts(j, 0) = 2.0 * (r * std::cos(angle) - tq * std::sin(angle));
    pts(j, 1) = 2.0 * (r * std::sin(angle) + tq * std::cos(angle));
  }
}

}  // namespace detail

// Draws n points from one of the 2D toy distributions. Deterministic for a
// given seed.
inline Matrix sample_toy(ToyName name, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_toy: need at least one sample");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(name) + 17));
  Matrix pts(n, 2);
  switch (name) {
    case ToyName::eight_gaussians:
      detail::sample_eight_gaussians(rng, pts);
      break;
    case ToyName::two_spirals:
      detail::sample_two_spirals(rng, pts);
      break;
    case ToyName::checkerboard:
      detail::sample_checkerboard(rng, pts);
      break;
    case ToyName::two_moons:
      detail::sample_two_moons(rng, pts);
      break;
    case ToyName::pinwheel:
      detail::sample_pinwheel(rng, pts);
      break;
  }
  return pts;
}

// Per-dimension affine standardization statistics.
struct StandardizeStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline StandardizeStats standardize_fit(const Matrix& pts) {
  const std::size_t n = pts.rows(), d = pts.cols();
  if (n == 0) throw DataError("standardize: empty data");
  StandardizeStats st;
  st.mean.assign(d, 0.0);
  st.stddev.assign(d, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) st.mean[c] += pts(j, c);
  for (std::size_t c = 0; c < d; ++c) st.mean[c] /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t c = 0; c < d; ++c) {
      const double v = pts(j, c) - st.mean[c];
      st.stddev[c] += v * v;
    }
  for (std::size_t c = 0; c < d; ++c) {
    st.stddev[c] = std::sqrt(st.stddev[c] / static_cast<double>(n));
    if (!(st.stddev[c] > 1e-12))
      throw DataError("standardize: dimension " + std::to_string(c) +
                      " has (near-)zero standard deviation");
  }
  return st;
}

inline void standardize_apply(Matrix& pts, const StandardizeStats& st) {
  if (pts.cols() != st.mean.size())
    throw DimensionError("standardize_apply: stats dimension mismatch");
  for (std::size_t j = 0; j < pts.rows(); ++j)
    for (std::size_t c = 0; c < pts.cols(); ++c)
      pts(j, c) = (pts(j, c) - st.mean[c]) / st.stddev[c];
}

inline void standardize_invert(Matrix& pts, const StandardizeStats& st) {
  if (pts.cols() != st.mean.size())
    throw DimensionError("standardize_invert: stats dimension mismatch");
  for (std::size_t j = 0; j < pts.rows(); ++j)
    for (std::size_t c = 0; c < pts.cols(); ++c)
      pts(j, c) = pts(j, c) * st.stddev[c] + st.mean[c];
}

// Points split into train/validation by a seeded shuffle, standardized with
// statistics fit on the training rows only.
struct Dataset {
  Matrix points;  // standardized, original row order
  std::vector<int> train_idx;
  std::vector<int> valid_idx;
  StandardizeStats stats;

  Matrix gather(const std::vector<int>& idx) const {
    Matrix out(idx.size(), points.cols());
    for (std::size_t j = 0; j < idx.size(); ++j)
      for (std::size_t c = 0; c < points.cols(); ++c)
        out(j, c) = points(static_cast<std::size_t>(idx[j]), c);
    return out;
  }
  Matrix train() const { return gather(train_idx); }
  Matrix valid() const { return gather(valid_idx); }
};

inline Dataset make_dataset(const Matrix& raw, double valid_frac, std::uint64_t seed) {
  const std::size_t n = raw.rows();
  if (n < 2) throw DataError("make_dataset: need at least two samples");
  if (valid_frac < 0.0 || valid_frac >= 1.0)
    throw ConfigError("make_dataset: valid fraction must be in [0, 1)");

  std::vector<int> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = static_cast<int>(j);
  Rng rng(mix_seed(seed, 0x51f7));
  rng.shuffle(order);

  Dataset ds;
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * (1.0 - valid_frac)));
  ds.train_idx.assign(order.begin(), order.begin() + n_train);
  ds.valid_idx.assign(order.begin() + n_train, order.end());

  ds.points = raw;
  Matrix train_raw(n_train, raw.cols());
  for (std::size_t j = 0; j < n_train; ++j)
    for (std::size_t c = 0; c < raw.cols(); ++c)
      train_raw(j, c) = raw(static_cast<std::size_t>(ds.train_idx[j]), c);
  ds.stats = standardize_fit(train_raw);
  standardize_apply(ds.points, ds.stats);
  return ds;
}

// CSV of points: header x0,x1,..., one sample per row, 17 significant digits
// so doubles round-trip exactly.
inline void write_points_csv(const std::string& path, const Matrix& pts) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (std::size_t c = 0; c < pts.cols(); ++c) out << (c ? ",x" : "x") << c;
  out << "\n";
  char buf[40];
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    for (std::size_t c = 0; c < pts.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", pts(j, c));
      if (c) out << ",";
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

inline Matrix read_points_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "': missing header");

  std::size_t d = 1;
  for (char ch : line)
    if (ch == ',') ++d;

  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t got = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("'" + path + "': bad number '" + cell + "' at row " +
                      std::to_string(rows + 1));
      }
      ++got;
    }
    if (got != d)
      throw IoError("'" + path + "': row " + std::to_string(rows + 1) + " has " +
                    std::to_string(got) + " cells, expected " + std::to_string(d));
    ++rows;
  }
  Matrix pts(rows, d);
  for (std::size_t i = 0; i < values.size(); ++i) pts[i] = values[i];
  return pts;
}

}  // namespace umnn
