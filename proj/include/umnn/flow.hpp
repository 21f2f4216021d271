#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "umnn/made.hpp"
#include "umnn/monotonic.hpp"
#include "umnn/rng.hpp"

namespace umnn {

// One autoregressive transformation: a fixed input permutation, a masked
// embedding network emitting (h^i, beta^i) for every dimension in one pass,
// and a single monotonic block shared across dimensions.
struct FlowStep {
  MadeNet made;
  MonotonicBlock block;
  std::vector<int> perm;  // permuted input: v[:, j] = u[:, perm[j]]
};

// Stack of flow steps over a standard-normal base distribution.
struct FlowModel {
  int d = 0;
  int q = 0;
  std::vector<int> made_hidden;
  std::vector<int> integrand_hidden;
  Hidden made_act = Hidden::ELU;
  Hidden integrand_act = Hidden::Squareplus;
  std::vector<FlowStep> steps;
};

inline std::vector<int> reversal_perm(int d) {
  std::vector<int> p(d);
  for (int j = 0; j < d; ++j) p[j] = d - 1 - j;
  return p;
}

inline std::vector<int> identity_perm(int d) {
  std::vector<int> p(d);
  std::iota(p.begin(), p.end(), 0);
  return p;
}

// Builds a k-step flow. Every step permutes its input by index reversal, so
// two consecutive steps see the original ordering again.
inline FlowModel make_flow_model(int d, int n_flows, const std::vector<int>& made_hidden,
                                 const std::vector<int>& integrand_hidden, int q,
                                 std::uint64_t seed, Hidden made_act = Hidden::ELU,
                                 Hidden integrand_act = Hidden::Squareplus) {
  if (d < 1) throw ConfigError("flow model: dimension must be >= 1");
  if (n_flows < 1) throw ConfigError("flow model: need at least one flow step");
  if (q < 1) throw ConfigError("flow model: embedding size must be >= 1");

  FlowModel model;
  model.d = d;
  model.q = q;
  model.made_hidden = made_hidden;
  model.integrand_hidden = integrand_hidden;
  model.made_act = made_act;
  model.integrand_act = integrand_act;
  model.steps.resize(n_flows);
  for (int k = 0; k < n_flows; ++k) {
    auto& step = model.steps[k];
    step.made = make_made(d, made_hidden, q, mix_seed(seed, 2 * k), made_act);
    step.block =
        make_monotonic_block(q, integrand_hidden, mix_seed(seed, 2 * k + 1), integrand_act);
    step.perm = reversal_perm(d);
  }
  return model;
}

// Zeroing all parameters makes f identically 1 (ELU(0)+1) and every h, beta
// zero, so each step becomes the identity map. Used by tests and sanity
// checks against the closed-form standard normal.
inline void zero_params(FlowModel& model) {
  for (auto& step : model.steps) {
    step.made.params.for_each_param([](double& w, double&) { w = 0.0; });
    step.block.integrand.for_each_param([](double& w, double&) { w = 0.0; });
  }
}

// Per-step forward cache. Flattened buffers order (sample j, dimension i) as
// row j*d + i.
struct StepTape {
  int quad_steps = 0;  // integration steps used by the forward pass
  Matrix v;        // B x d, permuted input
  MlpTape made_tape;
  Matrix x_flat;   // B*d x 1
  Matrix h_flat;   // B*d x q
  Matrix x0_flat;  // B*d x 1, zeros
  Matrix beta;     // B x d
  Matrix fvals;    // B*d x 1, f(v_i, h^i)
  Matrix z;        // B x d
  Matrix slf;      // B x 1, sum_i log f
  QuadWorkspace quad_ws;
  Matrix integral;  // B*d x 1
};

// Applies one step: permute, one MADE pass for all (h^i, beta^i), then the
// shared monotonic map per dimension with the quadrature batched over B*d
// rows. Also evaluates f at (v_i, h^i), giving the log-Jacobian terms.
inline void flow_step_forward(const FlowStep& step, const Matrix& x, int steps,
                              StepTape& tape) {
  const std::size_t b = x.rows();
  const std::size_t d = static_cast<std::size_t>(step.made.d);
  const std::size_t q = static_cast<std::size_t>(step.made.q);
  require_shape(x, b, d, "flow_step_forward x");
  if (!x.all_finite()) throw NumericError("flow_step_forward: non-finite input");
  tape.quad_steps = steps;

  tape.v.resize(b, d);
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t i = 0; i < d; ++i) tape.v(j, i) = x(j, step.perm[i]);

  const Matrix& made_out =
      mlp_forward(step.made.params, tape.v, step.made.activation(), tape.made_tape);

  tape.x_flat.resize(b * d, 1);
  tape.h_flat.resize(b * d, q);
  tape.x0_flat.resize(b * d, 1);
  tape.x0_flat.zero();
  tape.beta.resize(b, d);
  for (std::size_t j = 0; j < b; ++j) {
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t r = j * d + i;
      tape.x_flat(r, 0) = tape.v(j, i);
      const double* src = made_out.row(j) + i * (q + 1);
      double* dst = tape.h_flat.row(r);
      for (std::size_t c = 0; c < q; ++c) dst[c] = src[c];
      tape.beta(j, i) = src[q];
    }
  }

  // Node-looped quadrature over the flattened B*d rows; the first Chebyshev
  // node sits at t = x (since x0 = 0), so the boundary values f(v_i, h^i)
  // needed for the log-Jacobian come out of the same pass.
  const NetIntegrand f = step.block.net();
  integrate_forward_nodewise(f, tape.x0_flat, tape.x_flat, tape.h_flat, cc_rule(steps),
                             tape.quad_ws, tape.integral, &tape.fvals);

  tape.z.resize(b, d);
  tape.slf.resize(b, 1);
  for (std::size_t j = 0; j < b; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t r = j * d + i;
      tape.z(j, i) = tape.integral(r, 0) + tape.beta(j, i);
      acc += std::log(tape.fvals(r, 0));
    }
    tape.slf(j, 0) = acc;
  }
}

// Convenience wrapper returning (z, sum_log_f).
inline void flow_forward(const FlowStep& step, const Matrix& x, int steps, Matrix& z,
                         Matrix& sum_log_f) {
  StepTape tape;
  flow_step_forward(step, x, steps, tape);
  z = tape.z;
  sum_log_f = tape.slf;
}

inline double std_normal_logpdf_row(const double* z, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i) acc += z[i] * z[i];
  return -0.5 * acc - 0.5 * kLogTwoPi * static_cast<double>(d);
}

// log p(x) = log N(z_final; 0, I) + sum over steps of sum_log_f.
inline Matrix log_density(const FlowModel& model, const Matrix& x, int steps) {
  const std::size_t b = x.rows();
  require_shape(x, b, static_cast<std::size_t>(model.d), "log_density x");
  Matrix logp(b, 1);
  logp.zero();
  StepTape tape;
  Matrix cur = x;
  for (const auto& step : model.steps) {
    flow_step_forward(step, cur, steps, tape);
    for (std::size_t j = 0; j < b; ++j) logp(j, 0) += tape.slf(j, 0);
    cur = tape.z;
  }
  for (std::size_t j = 0; j < b; ++j)
    logp(j, 0) += std_normal_logpdf_row(cur.row(j), static_cast<std::size_t>(model.d));
  return logp;
}

namespace detail {

// Backward through one step. gz holds dLoss/dz for this step's output, gl is
// dLoss/d(sum_log_f) per sample (a constant -1/B for the NLL). Parameter
// gradients accumulate into the step's stores; gu receives dLoss/d(input).
inline void flow_step_backward(FlowStep& step, StepTape& tape, const Matrix& gz, double gl,
                               Matrix& gu) {
  const std::size_t b = tape.v.rows();
  const std::size_t d = static_cast<std::size_t>(step.made.d);
  const std::size_t q = static_cast<std::size_t>(step.made.q);
  require_shape(gz, b, d, "flow_step_backward gz");

  const NetIntegrand f = step.block.net();

  // (1) Quadrature path: z_i depends on (v_i, h^i, psi).
  Matrix go_flat(b * d, 1);
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t i = 0; i < d; ++i) go_flat(j * d + i, 0) = gz(j, i);
  Matrix gx_flat, gh_quad;
  integrate_backward(f, tape.x0_flat, tape.x_flat, tape.h_flat, go_flat, cc_rule(tape.quad_steps),
                     gx_flat, gh_quad);

  // (2) log f path: pointwise backward through the integrand at (v_i, h^i).
  MlpTape ftape;
  integrand_eval(f, tape.x_flat, tape.h_flat, ftape);
  Matrix glogf(b * d, 1);
  for (std::size_t r = 0; r < b * d; ++r) glogf(r, 0) = gl / tape.fvals(r, 0);
  const Matrix& gin_logf = mlp_backward(*f.params, f.activation(), ftape, glogf);

  // (3) Gradient w.r.t. the MADE outputs: h blocks collect the quadrature and
  // log f contributions, beta slots take gz directly.
  Matrix gmade(b, d * (q + 1));
  for (std::size_t j = 0; j < b; ++j) {
    double* dst = gmade.row(j);
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t r = j * d + i;
      const double* a = gh_quad.row(r);
      const double* c = gin_logf.row(r) + 1;
      for (std::size_t s = 0; s < q; ++s) dst[i * (q + 1) + s] = a[s] + c[s];
      dst[i * (q + 1) + q] = gz(j, i);
    }
  }
  const Matrix& gv_made =
      mlp_backward(step.made.params, step.made.activation(), tape.made_tape, gmade);

  // (4) Total gradient w.r.t. the permuted input, then un-permute.
  gu.resize(b, d);
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t r = j * d + i;
      const double gv = gx_flat(r, 0) + gin_logf(r, 0) + gv_made(j, i);
      gu(j, step.perm[i]) = gv;
    }
}

}  // namespace detail

// NLL of the batch plus a full backward pass; gradients accumulate into every
// step's parameter stores. Deterministic for a fixed batch order.
inline double nll_loss_and_grads(FlowModel& model, const Matrix& batch, int steps) {
  const std::size_t b = batch.rows();
  if (b == 0) throw ConfigError("nll_loss_and_grads: empty batch");
  require_shape(batch, b, static_cast<std::size_t>(model.d), "nll batch");

  const std::size_t n_steps = model.steps.size();
  std::vector<StepTape> tapes(n_steps);
  Matrix cur = batch;
  for (std::size_t k = 0; k < n_steps; ++k) {
    flow_step_forward(model.steps[k], cur, steps, tapes[k]);
    cur = tapes[k].z;
  }

  double loss = 0.0;
  for (std::size_t j = 0; j < b; ++j) {
    double lp = std_normal_logpdf_row(cur.row(j), static_cast<std::size_t>(model.d));
    for (std::size_t k = 0; k < n_steps; ++k) lp += tapes[k].slf(j, 0);
    loss -= lp;
  }
  loss /= static_cast<double>(b);
  if (!std::isfinite(loss)) throw NumericError("nll_loss_and_grads: non-finite loss");

  // dLoss/dz_final = z / B; each step's sum_log_f enters with weight -1/B.
  const double inv_b = 1.0 / static_cast<double>(b);
  Matrix gz(b, static_cast<std::size_t>(model.d));
  for (std::size_t j = 0; j < b; ++j)
    for (std::size_t i = 0; i < static_cast<std::size_t>(model.d); ++i)
      gz(j, i) = cur(j, i) * inv_b;

  Matrix gu;
  for (std::size_t k = n_steps; k-- > 0;) {
    detail::flow_step_backward(model.steps[k], tapes[k], gz, -inv_b, gu);
    gz = gu;
  }
  return loss;
}

// Inverts the flow: steps last to first; within a step, dimension i is
// recovered by bisection against h^i built from the already-recovered prefix,
// using exactly d MADE passes per step.
inline Matrix flow_inverse(const FlowModel& model, const Matrix& z, double tol = 1e-6,
                           int steps = 100) {
  const std::size_t b = z.rows();
  const std::size_t d = static_cast<std::size_t>(model.d);
  require_shape(z, b, d, "flow_inverse z");
  if (!z.all_finite()) throw NumericError("flow_inverse: non-finite input");

  Matrix cur = z;
  MlpTape made_tape;
  Matrix v(b, d), h(b, static_cast<std::size_t>(model.q)), beta(b, 1), zi(b, 1);
  for (std::size_t k = model.steps.size(); k-- > 0;) {
    const auto& step = model.steps[k];
    const std::size_t q = static_cast<std::size_t>(step.made.q);
    v.resize(b, d);
    v.zero();
    for (std::size_t i = 0; i < d; ++i) {
      const Matrix& made_out =
          mlp_forward(step.made.params, v, step.made.activation(), made_tape);
      h.resize(b, q);
      for (std::size_t j = 0; j < b; ++j) {
        const double* src = made_out.row(j) + i * (q + 1);
        for (std::size_t c = 0; c < q; ++c) h(j, c) = src[c];
        beta(j, 0) = src[q];
        zi(j, 0) = cur(j, i);
      }
      Matrix xi;
      try {
        xi = umnn_invert(step.block, zi, h, beta, steps, tol);
      } catch (const InversionError& e) {
        throw InversionError("flow_inverse: step " + std::to_string(k) + ", dimension " +
                             std::to_string(i) + ": " + e.what());
      }
      for (std::size_t j = 0; j < b; ++j) v(j, i) = xi(j, 0);
    }
    Matrix u(b, d);
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t i = 0; i < d; ++i) u(j, step.perm[i]) = v(j, i);
    cur = u;
  }
  return cur;
}

// Draws n samples: z ~ N(0, T*I) from the seeded generator, then inverts.
// The temperature scales only the noise, so T -> 0 collapses every sample
// onto flow_inverse(0).
inline Matrix model_sample(const FlowModel& model, std::size_t n, double temperature,
                           std::uint64_t seed, double tol = 1e-6, int steps = 100) {
  if (temperature <= 0.0) throw ConfigError("model_sample: temperature must be positive");
  Rng rng(mix_seed(seed, 0x5a3c));
  const double scale = std::sqrt(temperature);
  Matrix z(n, static_cast<std::size_t>(model.d));
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = scale * rng.normal();
  return flow_inverse(model, z, tol, steps);
}

}  // namespace umnn
