#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "umnn/quadrature.hpp"

namespace umnn {

// A strictly increasing scalar map y = F(x; h) + beta, where F integrates a
// strictly positive network f(t, h) from 0 to x. The offset beta is supplied
// by the caller (in the flow it comes from the embedding network).
struct MonotonicBlock {
  ParamStore integrand;  // widths (1+q) -> hidden... -> 1, output ELU+1
  int cond_width = 0;
  Hidden hidden = Hidden::Squareplus;
  int eval_steps = 100;  // integration steps used for inversion / evaluation

  NetIntegrand net() { return {&integrand, cond_width, hidden}; }
  NetIntegrand net() const {
    return {const_cast<ParamStore*>(&integrand), cond_width, hidden};
  }
};

inline MonotonicBlock make_monotonic_block(int cond_width, const std::vector<int>& hidden_sizes,
                                           std::uint64_t seed,
                                           Hidden hidden = Hidden::Squareplus) {
  if (cond_width < 0) throw ConfigError("monotonic block: negative embedding width");
  std::vector<int> sizes;
  sizes.push_back(1 + cond_width);
  sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
  sizes.push_back(1);
  MonotonicBlock block;
  block.integrand = init_mlp(sizes, seed);
  block.cond_width = cond_width;
  block.hidden = hidden;
  return block;
}

// y_j = integral of f from 0 to x_j, conditioned on h_j, plus beta_j.
inline Matrix umnn_forward(const MonotonicBlock& block, const Matrix& x, const Matrix& h,
                           const Matrix& beta, int steps) {
  require_shape(beta, x.rows(), 1, "umnn_forward beta");
  Matrix x0(x.rows(), 1);
  x0.zero();
  QuadWorkspace ws;
  Matrix y;
  integrate_forward_nodewise(block.net(), x0, x, h, cc_rule(steps), ws, y);
  for (std::size_t j = 0; j < y.rows(); ++j) y(j, 0) += beta(j, 0);
  return y;
}

// dF/dx = f(x, h): a single integrand evaluation, strictly positive.
inline Matrix umnn_derivative(const MonotonicBlock& block, const Matrix& x, const Matrix& h) {
  MlpTape tape;
  const Matrix& fv = integrand_eval(block.net(), x, h, tape);
  Matrix out(fv.rows(), 1);
  for (std::size_t i = 0; i < fv.size(); ++i) out[i] = fv[i];
  return out;
}

struct InvertStats {
  int doubling_rounds = 0;
  int bisection_iters = 0;
  double bracket_width = 0.0;  // widest per-sample bracket after doubling
};

// Solves F(x; h) + beta = y per sample by bracketed bisection. Brackets grow
// by symmetric doubling from [-1, 1]; failure to bracket after max_doublings
// signals a pathological integrand (e.g. an effectively bounded image).
inline Matrix umnn_invert(const MonotonicBlock& block, const Matrix& y, const Matrix& h,
                          const Matrix& beta, int steps, double tol = 1e-6,
                          InvertStats* stats = nullptr) {
  if (tol <= 0.0) throw ConfigError("umnn_invert: tolerance must be positive");
  const std::size_t b = y.rows();
  require_shape(y, b, 1, "umnn_invert y");
  require_shape(beta, b, 1, "umnn_invert beta");

  const NetIntegrand f = block.net();
  const QuadRule& rule = cc_rule(steps);
  Matrix x0(b, 1);
  x0.zero();
  QuadWorkspace ws;

  // Target for the pure integral part.
  Matrix target(b, 1);
  for (std::size_t j = 0; j < b; ++j) target(j, 0) = y(j, 0) - beta(j, 0);

  Matrix lo(b, 1), hi(b, 1), flo, fhi;
  lo.fill(-1.0);
  hi.fill(1.0);
  integrate_forward_nodewise(f, x0, lo, h, rule, ws, flo);
  integrate_forward_nodewise(f, x0, hi, h, rule, ws, fhi);

  const int max_doublings = 60;
  int rounds = 0;
  for (;; ++rounds) {
    bool all_bracketed = true;
    for (std::size_t j = 0; j < b; ++j)
      if (target(j, 0) < flo(j, 0) || target(j, 0) > fhi(j, 0)) {
        all_bracketed = false;
        lo(j, 0) *= 2.0;
        hi(j, 0) *= 2.0;
      }
    if (all_bracketed) break;
    if (rounds >= max_doublings) {
      std::size_t bad = 0;
      for (std::size_t j = 0; j < b; ++j)
        if (target(j, 0) < flo(j, 0) || target(j, 0) > fhi(j, 0)) {
          bad = j;
          break;
        }
      throw InversionError("umnn_invert: sample " + std::to_string(bad) +
                           ": failed to bracket the target after " +
                           std::to_string(max_doublings) + " doublings");
    }
    integrate_forward_nodewise(f, x0, lo, h, rule, ws, flo);
    integrate_forward_nodewise(f, x0, hi, h, rule, ws, fhi);
  }
  double width = 0.0;
  for (std::size_t j = 0; j < b; ++j) width = std::max(width, hi(j, 0) - lo(j, 0));

  Matrix mid(b, 1), fmid;
  std::vector<char> active(b, 1);
  Matrix result(b, 1);
  std::size_t remaining = b;
  const int max_iters = 200;
  int iters = 0;
  for (; iters < max_iters && remaining > 0; ++iters) {
    for (std::size_t j = 0; j < b; ++j)
      mid(j, 0) = active[j] ? 0.5 * (lo(j, 0) + hi(j, 0)) : result(j, 0);
    integrate_forward_nodewise(f, x0, mid, h, rule, ws, fmid);
    for (std::size_t j = 0; j < b; ++j) {
      if (!active[j]) continue;
      const double err = fmid(j, 0) - target(j, 0);
      const double bound = tol * std::max(1.0, std::abs(y(j, 0)));
      if (std::abs(err) <= bound || hi(j, 0) - lo(j, 0) <= tol * 1e-3) {
        result(j, 0) = mid(j, 0);
        active[j] = 0;
        --remaining;
      } else if (err < 0.0) {
        lo(j, 0) = mid(j, 0);
      } else {
        hi(j, 0) = mid(j, 0);
      }
    }
  }
  if (remaining > 0) {
    std::size_t bad = 0;
    for (std::size_t j = 0; j < b; ++j)
      if (active[j]) {
        bad = j;
        break;
      }
    throw InversionError("umnn_invert: sample " + std::to_string(bad) +
                         " (and " + std::to_string(remaining - 1) +
                         " more) did not reach tolerance");
  }
  if (stats) {
    stats->doubling_rounds = rounds;
    stats->bisection_iters = iters;
    stats->bracket_width = width;
  }
  return result;
}

}  // namespace umnn
