#pragma once

#include <cmath>
#include <concepts>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "umnn/matrix.hpp"
#include "umnn/nn.hpp"

namespace umnn {

// Clenshaw-Curtis rule on [-1, 1]: Chebyshev-extrema nodes cos(pi*k/(N-1))
// and closed-form weights. Integrates polynomials of degree <= N-1 exactly.
struct QuadRule {
  int steps = 0;
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

inline QuadRule compute_cc_rule(int n_steps) {
  if (n_steps < 2) throw ConfigError("quadrature: need at least 2 integration steps");
  const int n = n_steps - 1;  // panel count
  QuadRule rule;
  rule.steps = n_steps;
  rule.nodes.resize(n_steps);
  rule.weights.resize(n_steps);

  // Fill one half and mirror so nodes are exactly symmetric about 0 and
  // weights exactly symmetric in index.
  for (int k = 0; 2 * k <= n; ++k) {
    const double c = (2 * k == n) ? 0.0 : std::cos(kPi * k / n);
    rule.nodes[k] = c;
    rule.nodes[n - k] = -c;

    double s = 0.0;
    const int half = n / 2;
    for (int j = 1; j <= half; ++j) {
      const double bj = (2 * j == n) ? 1.0 : 2.0;
      s += bj * std::cos(2.0 * j * kPi * k / n) / (4.0 * j * j - 1.0);
    }
    const double ck = (k == 0 || k == n) ? 1.0 : 2.0;
    const double w = ck / n * (1.0 - s);
    rule.weights[k] = w;
    rule.weights[n - k] = w;
  }
  return rule;
}

}  // namespace detail

// Returns the cached rule for a step count, computing it on first use.
inline const QuadRule& cc_rule(int n_steps) {
  static std::map<int, QuadRule> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n_steps);
  if (it == cache.end()) it = cache.emplace(n_steps, detail::compute_cc_rule(n_steps)).first;
  return it->second;
}

// A positive scalar function f(t, h) backed by an MLP over rows [t | h],
// with the output forced strictly positive (ELU + 1).
struct NetIntegrand {
  ParamStore* params = nullptr;  // input width 1 + cond_width, output width 1
  int cond_width = 0;
  Hidden hidden = Hidden::Squareplus;

  Activation activation() const { return {hidden, Output::EluPlusOne}; }
};

// Evaluates the integrand on a batch: assembles [t | h] rows straight into
// the tape and runs the MLP forward. Returns the [B x 1] output held by the
// tape.
inline const Matrix& integrand_eval(const NetIntegrand& f, const Matrix& t, const Matrix& h,
                                    MlpTape& tape) {
  const std::size_t b = t.rows();
  const std::size_t q = static_cast<std::size_t>(f.cond_width);
  require_shape(h, b, q, "integrand h");
  tape.input.resize(b, 1 + q);
  for (std::size_t r = 0; r < b; ++r) {
    double* row = tape.input.row(r);
    row[0] = t(r, 0);
    const double* hr = h.row(r);
    for (std::size_t j = 0; j < q; ++j) row[1 + j] = hr[j];
  }
  return mlp_forward_prepared(*f.params, f.activation(), tape);
}

namespace detail {

inline void check_quad_shapes(const Matrix& x0, const Matrix& x, const Matrix& h) {
  const std::size_t b = x.rows();
  require_shape(x, b, 1, "quadrature x");
  require_shape(x0, b, 1, "quadrature x0");
  if (h.rows() != b) throw DimensionError("quadrature: h batch does not match x");
}

[[noreturn]] inline void bad_node(std::size_t flat, std::size_t n, double t) {
  throw NumericError("quadrature: non-finite integrand output at node " +
                     std::to_string(flat % n) + " of sample " + std::to_string(flat / n) +
                     " (t = " + std::to_string(t) + ")");
}

}  // namespace detail

// Batched Clenshaw-Curtis integral of f over [x0_j, x_j], conditioned per
// sample on h_j. All B*N node evaluations go through one integrand call;
// rows are ordered sample-major (row j*N + i is node i of sample j). The
// final weighted reduction runs in fixed node order per sample.
//
// The callable sees (t [M x 1], h [M x q], out [M x 1]).
template <class F>
  requires std::invocable<F&, const Matrix&, const Matrix&, Matrix&>
void integrate_forward(F&& f, const Matrix& x0, const Matrix& x, const Matrix& h,
                       const QuadRule& rule, Matrix& result) {
  detail::check_quad_shapes(x0, x, h);
  const std::size_t b = x.rows();
  const std::size_t q = h.cols();
  const std::size_t n = static_cast<std::size_t>(rule.steps);

  Matrix t_all(b * n, 1);
  Matrix h_all(b * n, q);
  Matrix out(b * n, 1);
  for (std::size_t j = 0; j < b; ++j) {
    const double half = 0.5 * (x(j, 0) - x0(j, 0));
    const double* hr = h.row(j);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = j * n + i;
      t_all(r, 0) = x0(j, 0) + half * (rule.nodes[i] + 1.0);
      double* dst = h_all.row(r);
      for (std::size_t c = 0; c < q; ++c) dst[c] = hr[c];
    }
  }

  f(t_all, h_all, out);

  result.resize(b, 1);
  for (std::size_t j = 0; j < b; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = out(j * n + i, 0);
      if (!std::isfinite(v)) detail::bad_node(j * n + i, n, t_all(j * n + i, 0));
      acc += rule.weights[i] * v;
    }
    result(j, 0) = 0.5 * (x(j, 0) - x0(j, 0)) * acc;
  }
}

inline void integrate_forward(const NetIntegrand& f, const Matrix& x0, const Matrix& x,
                              const Matrix& h, const QuadRule& rule, Matrix& result) {
  MlpTape tape;
  integrate_forward(
      [&](const Matrix& t, const Matrix& hh, Matrix& out) {
        const Matrix& y = integrand_eval(f, t, hh, tape);
        out.resize(y.rows(), 1);
        for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i];
      },
      x0, x, h, rule, result);
}

inline Matrix integrate_forward(const NetIntegrand& f, const Matrix& x0, const Matrix& x,
                                const Matrix& h, const QuadRule& rule) {
  Matrix result;
  integrate_forward(f, x0, x, h, rule, result);
  return result;
}

// Reusable buffers for the node-looped quadrature paths.
struct QuadWorkspace {
  MlpTape tape;
  Matrix acc;
};

namespace detail {

// Nodes are processed in fixed-size groups: large enough to keep the matmul
// kernels efficient, small and constant so buffer footprints stay
// independent of the total node count.
inline constexpr std::size_t kNodeChunk = 1;

// Assembles [t | h] integrand rows for node group [first, first+count) into
// the tape's input buffer: row u*b + j holds node first+u of sample j.
inline void fill_node_inputs(const Matrix& x0, const Matrix& x, const Matrix& h,
                             const QuadRule& rule, std::size_t first, std::size_t count,
                             Matrix& input) {
  const std::size_t b = x.rows();
  const std::size_t q = h.cols();
  input.resize(count * b, 1 + q);
  for (std::size_t u = 0; u < count; ++u) {
    const double du = 0.5 * (rule.nodes[first + u] + 1.0);
    for (std::size_t j = 0; j < b; ++j) {
      double* row = input.row(u * b + j);
      row[0] = x0(j, 0) + (x(j, 0) - x0(j, 0)) * du;
      const double* hr = h.row(j);
      for (std::size_t c = 0; c < q; ++c) row[1 + c] = hr[c];
    }
  }
}

}  // namespace detail

// Node-looped evaluation of the same quadrature sum: the nodes are visited
// in fixed-size groups against a reused workspace, so retained storage is
// O(B) instead of O(B*N). Per sample the node accumulation order matches the
// batched form exactly, so the results are identical; this variant exists
// because its buffers stay cache-resident in hot loops. When f_at_end is
// non-null it receives the integrand values at the first Chebyshev node
// t = x0 + (x - x0), which is exactly f(x, h) whenever x0 = 0.
inline void integrate_forward_nodewise(const NetIntegrand& f, const Matrix& x0,
                                       const Matrix& x, const Matrix& h,
                                       const QuadRule& rule, QuadWorkspace& ws,
                                       Matrix& result, Matrix* f_at_end = nullptr) {
  detail::check_quad_shapes(x0, x, h);
  const std::size_t b = x.rows();
  const std::size_t n = static_cast<std::size_t>(rule.steps);

  ws.acc.resize(b, 1);
  ws.acc.zero();
  if (f_at_end) f_at_end->resize(b, 1);
  mlp_stage_weights(*f.params, ws.tape);
  for (std::size_t first = 0; first < n; first += detail::kNodeChunk) {
    const std::size_t count = std::min(detail::kNodeChunk, n - first);
    detail::fill_node_inputs(x0, x, h, rule, first, count, ws.tape.input);
    const Matrix& fv = mlp_forward_prepared(*f.params, f.activation(), ws.tape, true);
    for (std::size_t u = 0; u < count; ++u) {
      const std::size_t i = first + u;
      for (std::size_t j = 0; j < b; ++j) {
        const double v = fv(u * b + j, 0);
        if (!std::isfinite(v))
          detail::bad_node(j * n + i, n, ws.tape.input(u * b + j, 0));
        ws.acc(j, 0) += rule.weights[i] * v;
      }
    }
    if (f_at_end && first == 0)
      for (std::size_t j = 0; j < b; ++j) (*f_at_end)(j, 0) = fv(j, 0);
  }
  result.resize(b, 1);
  for (std::size_t j = 0; j < b; ++j)
    result(j, 0) = 0.5 * (x(j, 0) - x0(j, 0)) * ws.acc(j, 0);
}

// Backward pass of the quadrature: the exact gradients of the discrete
// forward map above. Per sample j, with s_j = 0.5*(x_j-x0_j)*grad_out[j]:
//   grad_h[j]   = sum_i w_i * s_j * (df/dh)(t_ij, h_j)
//   grad_theta += sum_j sum_i w_i * s_j * (df/dpsi)(t_ij, h_j)
//   grad_x[j]   = grad_out[j] * [ 0.5*sum_i w_i f(t_ij)
//                 + s_j/grad_out[j] * sum_i w_i (df/dt)(t_ij) * (node_i+1)/2 ]
// The grad_x expression is the derivative of the quadrature sum itself; it
// converges to the boundary value f(x_j, h_j) as N grows, so the two forms
// agree wherever the rule has converged while finite differences of the
// forward are matched exactly at any N. Node intermediates live in one
// workspace that is reused across the node loop, so retained storage does
// not grow with N.
inline void integrate_backward(const NetIntegrand& f, const Matrix& x0, const Matrix& x,
                               const Matrix& h, const Matrix& grad_out, const QuadRule& rule,
                               Matrix& grad_x, Matrix& grad_h) {
  detail::check_quad_shapes(x0, x, h);
  const std::size_t b = x.rows();
  const std::size_t q = h.cols();
  const std::size_t n = static_cast<std::size_t>(rule.steps);
  require_shape(grad_out, b, 1, "integrate_backward grad_out");
  if (q != static_cast<std::size_t>(f.cond_width))
    throw DimensionError("integrate_backward: h width does not match integrand");

  // Workspace: allocated once here, reused across the node groups.
  MlpTape tape;
  Matrix go;
  Matrix scale(b, 1);
  Matrix fsum(b, 1);
  Matrix gx_nodes(b, 1);
  for (std::size_t j = 0; j < b; ++j)
    scale(j, 0) = 0.5 * (x(j, 0) - x0(j, 0)) * grad_out(j, 0);
  fsum.zero();
  gx_nodes.zero();

  grad_h.resize(b, q);
  grad_h.zero();

  const Activation act = f.activation();
  mlp_stage_weights(*f.params, tape);
  for (std::size_t first = 0; first < n; first += detail::kNodeChunk) {
    const std::size_t count = std::min(detail::kNodeChunk, n - first);
    detail::fill_node_inputs(x0, x, h, rule, first, count, tape.input);
    const Matrix& fv = mlp_forward_prepared(*f.params, act, tape, true);
    go.resize(count * b, 1);
    for (std::size_t u = 0; u < count; ++u) {
      const std::size_t i = first + u;
      for (std::size_t j = 0; j < b; ++j) {
        const double v = fv(u * b + j, 0);
        if (!std::isfinite(v))
          detail::bad_node(j * n + i, n, tape.input(u * b + j, 0));
        fsum(j, 0) += rule.weights[i] * v;
        go(u * b + j, 0) = rule.weights[i] * scale(j, 0);
      }
    }
    const Matrix& gin = mlp_backward(*f.params, act, tape, go);
    for (std::size_t u = 0; u < count; ++u) {
      const double du = 0.5 * (rule.nodes[first + u] + 1.0);  // dt_i/dx
      for (std::size_t j = 0; j < b; ++j) {
        detail::axpy(1.0, gin.row(u * b + j) + 1, grad_h.row(j), q);
        gx_nodes(j, 0) += gin(u * b + j, 0) * du;
      }
    }
  }

  grad_x.resize(b, 1);
  for (std::size_t j = 0; j < b; ++j)
    grad_x(j, 0) = 0.5 * fsum(j, 0) * grad_out(j, 0) + gx_nodes(j, 0);
}

}  // namespace umnn
