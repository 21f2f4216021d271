#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "umnn/toy_data.hpp"

using namespace umnn;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("every generator is seed-deterministic and finite") {
  for (auto name : {ToyName::eight_gaussians, ToyName::two_spirals, ToyName::checkerboard,
                    ToyName::two_moons, ToyName::pinwheel}) {
    Matrix a = sample_toy(name, 500, 11);
    Matrix b = sample_toy(name, 500, 11);
    Matrix c = sample_toy(name, 500, 12);
    REQUIRE(a.rows() == 500);
    REQUIRE(a.cols() == 2);
    CHECK(a.all_finite());
    bool identical = true, differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      identical = identical && a[i] == b[i];
      differs = differs || a[i] != c[i];
    }
    CHECK(identical);
    CHECK(differs);
  }
}

TEST_CASE("unknown dataset names are rejected") {
  CHECK_THROWS_AS(toy_from_string("nine_gaussians"), ConfigError);
}

TEST_CASE("eight gaussians: every point lies within 5 sigma of a mode") {
  const Matrix pts = sample_toy(ToyName::eight_gaussians, 20000, 0);
  const auto means = eight_gaussian_means();
  const double bound = 5.0 * toy_constants::eight_gaussians_sigma;
  std::size_t outside = 0;
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    double best = 1e30;
    for (const auto& m : means) {
      const double dx = pts(j, 0) - m[0], dy = pts(j, 1) - m[1];
      best = std::min(best, std::sqrt(dx * dx + dy * dy));
    }
    if (best > bound) ++outside;
  }
  CHECK(outside == 0);
}

TEST_CASE("checkerboard puts (almost) no mass on the white cells") {
  const Matrix pts = sample_toy(ToyName::checkerboard, 20000, 3);
  std::size_t white = 0;
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    // cells are side-2 squares; the construction fills cells whose x and y
    // indices share parity, so opposite-parity cells must stay empty
    const long cx = static_cast<long>(std::floor(pts(j, 0) / 2.0));
    const long cy = static_cast<long>(std::floor(pts(j, 1) / 2.0));
    const auto par = [](long v) { return ((v % 2) + 2) % 2; };
    if (par(cx) != par(cy)) ++white;
  }
  CHECK(static_cast<double>(white) < 0.001 * static_cast<double>(pts.rows()));
}

TEST_CASE("standardize: already-standard data passes through unchanged") {
  Rng rng(5);
  Matrix pts(4000, 2);
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = rng.normal();
  // force exact zero mean / unit stddev column-wise first
  auto st0 = standardize_fit(pts);
  standardize_apply(pts, st0);
  Matrix copy = pts;
  auto st = standardize_fit(pts);
  standardize_apply(pts, st);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(pts[i] - copy[i]) < 1e-12);
}

TEST_CASE("standardize then invert is the identity") {
  Matrix pts = sample_toy(ToyName::two_moons, 300, 9);
  Matrix copy = pts;
  auto st = standardize_fit(pts);
  standardize_apply(pts, st);
  standardize_invert(pts, st);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(std::abs(pts[i] - copy[i]) < 1e-12);
}

TEST_CASE("a constant column raises a degenerate-data error") {
  Matrix pts(10, 2);
  for (std::size_t j = 0; j < 10; ++j) {
    pts(j, 0) = static_cast<double>(j);
    pts(j, 1) = 3.14;
  }
  CHECK_THROWS_AS(standardize_fit(pts), DataError);
}

TEST_CASE("dataset splits are disjoint, exhaustive, and standardized on train stats") {
  Matrix raw = sample_toy(ToyName::pinwheel, 1000, 21);
  Dataset ds = make_dataset(raw, 0.1, 21);
  CHECK(ds.train_idx.size() == 900);
  CHECK(ds.valid_idx.size() == 100);

  std::vector<char> seen(1000, 0);
  for (int i : ds.train_idx) seen[static_cast<std::size_t>(i)] += 1;
  for (int i : ds.valid_idx) seen[static_cast<std::size_t>(i)] += 1;
  for (char s : seen) CHECK(s == 1);

  // train rows have mean ~0 and stddev ~1 per dimension
  Matrix train = ds.train();
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0;
    for (std::size_t j = 0; j < train.rows(); ++j) mean += train(j, c);
    mean /= static_cast<double>(train.rows());
    double var = 0;
    for (std::size_t j = 0; j < train.rows(); ++j) {
      const double v = train(j, c) - mean;
      var += v * v;
    }
    var /= static_cast<double>(train.rows());
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
  }
}

TEST_CASE("points CSV round-trips doubles exactly") {
  Matrix pts = sample_toy(ToyName::two_spirals, 137, 4);
  pts(0, 0) = 0.1 + 0.2;  // a value with a long binary expansion
  const std::string path = temp_path("umnn_test_points.csv");
  write_points_csv(path, pts);
  Matrix back = read_points_csv(path);
  REQUIRE(back.rows() == pts.rows());
  REQUIRE(back.cols() == pts.cols());
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK(back[i] == pts[i]);
  std::filesystem::remove(path);
}

TEST_CASE("points CSV rejects malformed rows") {
  const std::string path = temp_path("umnn_test_bad.csv");
  {
    std::ofstream out(path);
    out << "x0,x1\n1.0,2.0\n3.0\n";
  }
  CHECK_THROWS_AS(read_points_csv(path), IoError);
  std::filesystem::remove(path);
}
