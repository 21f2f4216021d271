#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "umnn/nn.hpp"
#include "umnn/rng.hpp"

using namespace umnn;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("init_mlp draws Glorot-uniform weights and zero biases") {
  // 1x1 layer: bound is sqrt(6/2) = sqrt(3)
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ParamStore ps = init_mlp({1, 1}, seed);
    CHECK(std::abs(ps.layers[0].w(0, 0)) <= std::sqrt(3.0));
    CHECK(ps.layers[0].b(0, 0) == 0.0);
  }
}

TEST_CASE("init_mlp is deterministic per seed") {
  ParamStore a = init_mlp({3, 8, 2}, 1234);
  ParamStore b = init_mlp({3, 8, 2}, 1234);
  ParamStore c = init_mlp({3, 8, 2}, 1235);
  bool identical = true, differs = false;
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (std::size_t i = 0; i < a.layers[l].w.size(); ++i) {
      identical = identical && a.layers[l].w[i] == b.layers[l].w[i];
      differs = differs || a.layers[l].w[i] != c.layers[l].w[i];
    }
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("init_mlp builds the 4x50 toy integrand shape") {
  ParamStore ps = init_mlp({3, 50, 50, 50, 50, 1}, 7);
  REQUIRE(ps.layers.size() == 5);
  CHECK(ps.in_width() == 3);
  CHECK(ps.out_width() == 1);
  for (int l = 1; l <= 4; ++l) CHECK(ps.layers[l].fan_in() == 50);
  CHECK(ps.values_finite());
}

TEST_CASE("init_mlp rejects degenerate layer lists") {
  CHECK_THROWS_AS(init_mlp({4}, 0), ConfigError);
  CHECK_THROWS_AS(init_mlp({4, 0, 2}, 0), ConfigError);
}

TEST_CASE("zero network with ELU+1 output emits exactly 1") {
  ParamStore ps = init_mlp({2, 4, 1}, 3);
  ps.for_each_param([](double& w, double&) { w = 0.0; });
  Rng rng(9);
  Matrix x = random_matrix(6, 2, rng);
  Matrix y = mlp_forward(ps, x, {Hidden::ReLU, Output::EluPlusOne});
  for (std::size_t j = 0; j < y.rows(); ++j) CHECK(y(j, 0) == 1.0);
}

TEST_CASE("ELU+1 output stays strictly positive, e.g. exp(-20) at preact -20") {
  ParamStore ps = init_mlp({1, 1}, 0);
  ps.layers[0].w(0, 0) = 0.0;
  ps.layers[0].b(0, 0) = -20.0;
  Matrix x(1, 1);
  x(0, 0) = 0.0;
  Matrix y = mlp_forward(ps, x, {Hidden::ReLU, Output::EluPlusOne});
  CHECK(y(0, 0) == doctest::Approx(std::exp(-20.0)).epsilon(1e-14));
  CHECK(y(0, 0) > 0.0);

  // extreme pre-activations, including beyond the exp underflow threshold
  for (double b : {-1e3, -1e6, -745.5, -1e300}) {
    ps.layers[0].b(0, 0) = b;
    Matrix v = mlp_forward(ps, x, {Hidden::ReLU, Output::EluPlusOne});
    CHECK(v(0, 0) > 0.0);
    CHECK(std::isfinite(std::log(v(0, 0))));
  }
}

TEST_CASE("forward matches a hand-rolled evaluation oracle") {
  Rng rng(42);
  for (auto hidden : {Hidden::ReLU, Hidden::ELU, Hidden::Tanh}) {
    ParamStore ps = init_mlp({4, 7, 3}, 100 + static_cast<int>(hidden));
    Activation act{hidden, Output::Linear};
    Matrix x = random_matrix(5, 4, rng);
    Matrix y = mlp_forward(ps, x, act);
    for (std::size_t j = 0; j < 5; ++j) {
      std::vector<double> row(x.row(j), x.row(j) + 4);
      const auto want = oracles::brute_mlp_forward(ps, row, act);
      for (std::size_t o = 0; o < 3; ++o)
        CHECK(oracles::rel_err(y(j, o), want[o]) < 1e-12);
    }
  }
}

TEST_CASE("forward is a pure function of params and input") {
  ParamStore ps = init_mlp({3, 16, 2}, 5);
  Rng rng(6);
  Matrix x = random_matrix(4, 3, rng);
  Matrix a = mlp_forward(ps, x, {Hidden::ELU, Output::Linear});
  Matrix b = mlp_forward(ps, x, {Hidden::ELU, Output::Linear});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("backward with zero upstream gradient changes nothing") {
  ParamStore ps = init_mlp({3, 8, 2}, 11);
  MlpTape tape;
  Rng rng(12);
  Matrix x = random_matrix(4, 3, rng);
  Activation act{Hidden::ReLU, Output::Linear};
  mlp_forward(ps, x, act, tape);
  Matrix go(4, 2);
  go.zero();
  const Matrix& gin = mlp_backward(ps, act, tape, go);
  for (std::size_t i = 0; i < gin.size(); ++i) CHECK(gin[i] == 0.0);
  for (const auto& l : ps.layers) {
    for (std::size_t i = 0; i < l.gw.size(); ++i) CHECK(l.gw[i] == 0.0);
    for (std::size_t i = 0; i < l.gb.size(); ++i) CHECK(l.gb[i] == 0.0);
  }
}

TEST_CASE("backward of a 1x1 linear net gives the analytic derivative") {
  ParamStore ps = init_mlp({1, 1}, 2);
  const double w = 0.73;
  ps.layers[0].w(0, 0) = w;
  MlpTape tape;
  Matrix x(1, 1);
  x(0, 0) = 2.5;
  Activation act{Hidden::ReLU, Output::Linear};
  mlp_forward(ps, x, act, tape);
  Matrix go(1, 1);
  go(0, 0) = 1.0;
  const Matrix& gin = mlp_backward(ps, act, tape, go);
  CHECK(ps.layers[0].gw(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(gin(0, 0) == doctest::Approx(w).epsilon(1e-15));
}

TEST_CASE("backward accumulates rather than overwriting") {
  ParamStore ps = init_mlp({2, 4, 1}, 8);
  MlpTape tape;
  Rng rng(3);
  Matrix x = random_matrix(3, 2, rng);
  Activation act{Hidden::Tanh, Output::Linear};
  Matrix go(3, 1);
  go.fill(1.0);
  mlp_forward(ps, x, act, tape);
  mlp_backward(ps, act, tape, go);
  const double once = ps.layers[0].gw(0, 0);
  mlp_forward(ps, x, act, tape);
  mlp_backward(ps, act, tape, go);
  CHECK(ps.layers[0].gw(0, 0) == doctest::Approx(2.0 * once).epsilon(1e-12));
}

TEST_CASE("parameter and input gradients match central finite differences") {
  // nets up to 3 hidden layers x 32 units, loss = sum(output)
  const std::vector<std::vector<int>> shapes = {
      {2, 8, 1}, {3, 16, 16, 2}, {4, 32, 32, 32, 1}};
  int seed = 0;
  for (const auto& shape : shapes) {
    for (auto hidden : {Hidden::ELU, Hidden::Tanh}) {
      ParamStore ps = init_mlp(shape, 50 + seed++);
      Activation act{hidden, Output::EluPlusOne};
      Rng rng(seed);
      Matrix x = random_matrix(4, shape.front(), rng);

      auto loss = [&] {
        Matrix y = mlp_forward(ps, x, act);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y[i];
        return s;
      };

      const auto fd = oracles::fd_param_grads(ps, loss);

      ps.zero_grads();
      MlpTape tape;
      mlp_forward(ps, x, act, tape);
      Matrix go(4, shape.back());
      go.fill(1.0);
      const Matrix& gin = mlp_backward(ps, act, tape, go);

      std::size_t i = 0;
      double worst = 0;
      ps.for_each_param([&](double&, double& g) {
        worst = std::max(worst, oracles::grad_err(g, fd[i]));
        ++i;
      });
      CHECK(worst < 1e-5);

      // input gradients against finite differences of the same loss
      std::vector<double*> slots;
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) slots.push_back(&x(r, c));
      const auto fdx = oracles::fd_vector_grads(slots, loss);
      std::size_t k = 0;
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c)
          CHECK(oracles::grad_err(gin(r, c), fdx[k++]) < 1e-5);
    }
  }
}

TEST_CASE("masked weights stay zero through forward/backward/step cycles") {
  ParamStore ps = init_mlp({3, 6, 2}, 21);
  // checker mask on the first layer
  Matrix mask(6, 3);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 2) ? 1.0 : 0.0;
  ps.layers[0].mask = mask;
  ps.apply_masks();

  AdamState adam;
  adam.lr = 1e-2;
  adam.weight_decay = 1e-3;
  Rng rng(22);
  Activation act{Hidden::ELU, Output::Linear};
  MlpTape tape;
  for (int cycle = 0; cycle < 20; ++cycle) {
    Matrix x = random_matrix(5, 3, rng);
    mlp_forward(ps, x, act, tape);
    Matrix go = random_matrix(5, 2, rng);
    mlp_backward(ps, act, tape, go);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i] == 0.0) CHECK(ps.layers[0].gw[i] == 0.0);
    adam_step(ps, adam);
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i] == 0.0) CHECK(ps.layers[0].w[i] == 0.0);
  }
  CHECK(adam.step_count == 20);
}

TEST_CASE("adam leaves parameters alone when gradients are zero and decay is off") {
  ParamStore ps = init_mlp({2, 4, 1}, 31);
  ParamStore ref = init_mlp({2, 4, 1}, 31);
  AdamState adam;
  adam.weight_decay = 0.0;
  ps.zero_grads();
  adam_step(ps, adam);
  for (std::size_t l = 0; l < ps.layers.size(); ++l)
    for (std::size_t i = 0; i < ps.layers[l].w.size(); ++i)
      CHECK(ps.layers[l].w[i] == ref.layers[l].w[i]);
}

TEST_CASE("adam moves against the gradient sign") {
  ParamStore ps = init_mlp({1, 1}, 1);
  ps.layers[0].w(0, 0) = 0.0;
  AdamState adam;
  for (int i = 0; i < 10; ++i) {
    ps.layers[0].gw(0, 0) = 2.0;  // constant positive gradient
    adam_step(ps, adam);
  }
  CHECK(ps.layers[0].w(0, 0) < 0.0);
}

TEST_CASE("adam minimizes the quadratic bowl (w-3)^2") {
  // Independent oracle: the textbook update run as a standalone loop.
  double ow = 0.0, om = 0.0, ov = 0.0;
  auto oracle_step = [&](int t) {
    const double g = 2.0 * (ow - 3.0);
    om = 0.9 * om + 0.1 * g;
    ov = 0.999 * ov + 0.001 * g * g;
    const double mh = om / (1.0 - std::pow(0.9, t));
    const double vh = ov / (1.0 - std::pow(0.999, t));
    ow -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
  };

  ParamStore ps = init_mlp({1, 1}, 1);
  ps.layers[0].w(0, 0) = 0.0;
  AdamState adam;
  adam.lr = 1e-3;
  auto impl_step = [&] {
    const double w = ps.layers[0].w(0, 0);
    ps.layers[0].gw(0, 0) = 2.0 * (w - 3.0);
    adam_step(ps, adam);
  };

  for (int t = 1; t <= 5000; ++t) {
    oracle_step(t);
    impl_step();
  }
  // Frozen from the oracle: |w - 3| = 6.227e-2 after 5000 steps, below 1e-2
  // shortly after (5.36e-3 at 6000).
  CHECK(ps.layers[0].w(0, 0) == doctest::Approx(ow).epsilon(1e-12));
  CHECK(std::abs(ps.layers[0].w(0, 0) - 3.0) == doctest::Approx(6.227e-2).epsilon(1e-3));
  for (int t = 5001; t <= 6000; ++t) {
    oracle_step(t);
    impl_step();
  }
  CHECK(std::abs(ps.layers[0].w(0, 0) - 3.0) < 1e-2);
}

TEST_CASE("adam rejects non-finite gradients without touching parameters") {
  ParamStore ps = init_mlp({2, 3, 1}, 77);
  ParamStore ref = init_mlp({2, 3, 1}, 77);
  AdamState adam;
  ps.layers[0].gw(0, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step(ps, adam), NumericError);
  CHECK(adam.step_count == 0);
  for (std::size_t l = 0; l < ps.layers.size(); ++l)
    for (std::size_t i = 0; i < ps.layers[l].w.size(); ++i)
      CHECK(ps.layers[l].w[i] == ref.layers[l].w[i]);
}

TEST_CASE("shape mismatches are reported as dimension errors") {
  ParamStore ps = init_mlp({3, 4, 2}, 1);
  Matrix x(2, 5);
  x.zero();
  CHECK_THROWS_AS(mlp_forward(ps, x, {Hidden::ReLU, Output::Linear}), DimensionError);
}
