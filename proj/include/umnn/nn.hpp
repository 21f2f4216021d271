#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "umnn/matrix.hpp"
#include "umnn/rng.hpp"

namespace umnn {

// Hidden-layer nonlinearity. The output treatment is chosen separately so the
// same machinery drives both the embedding network (plain affine output) and
// the integrand network (output forced strictly positive). Squareplus is the
// algebraic softplus (z + sqrt(z*z+1))/2: smooth everywhere and free of
// transcendental calls, which matters in the quadrature's inner loop.
enum class Hidden : std::uint8_t { ReLU = 0, ELU = 1, Tanh = 2, Squareplus = 3 };

enum class Output : std::uint8_t { Linear = 0, EluPlusOne = 1 };

struct Activation {
  Hidden hidden = Hidden::ReLU;
  Output output = Output::Linear;
};

namespace detail {

// y += a * x, contiguous. The element-wise form vectorizes without changing
// the order of any individual accumulation, so results stay deterministic.
inline void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

#if defined(__AVX512F__)

namespace avx512 {

// One output tile: R rows by G vector groups (of 8 doubles), the last group
// optionally masked. Accumulators live in registers across the whole k-loop;
// per output element the k-terms keep their fixed ascending order.
template <int R, int G>
inline void mm_tile(const double* const* xr, std::size_t K, const double* __restrict w,
                    std::size_t N, std::size_t c, __mmask8 last, const double* bias,
                    double* const* orow) {
  __m512d acc[R][G];
  for (int g = 0; g < G; ++g) {
    const __mmask8 m = (g == G - 1) ? last : 0xFF;
    const __m512d init =
        bias ? _mm512_maskz_loadu_pd(m, bias + c + 8 * g) : _mm512_setzero_pd();
    for (int r = 0; r < R; ++r) acc[r][g] = init;
  }
  for (std::size_t k = 0; k < K; ++k) {
    const double* wr = w + k * N + c;
    __m512d wv[G];
    for (int g = 0; g < G; ++g)
      wv[g] = (g == G - 1) ? _mm512_maskz_loadu_pd(last, wr + 8 * g)
                           : _mm512_loadu_pd(wr + 8 * g);
    for (int r = 0; r < R; ++r) {
      const __m512d b = _mm512_set1_pd(xr[r][k]);
      for (int g = 0; g < G; ++g) acc[r][g] = _mm512_fmadd_pd(b, wv[g], acc[r][g]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int g = 0; g < G; ++g)
      _mm512_mask_storeu_pd(orow[r] + c + 8 * g, (g == G - 1) ? last : __mmask8(0xFF),
                            acc[r][g]);
}

template <int R>
inline void mm_rows(const double* const* xr, std::size_t K, const double* w, std::size_t N,
                    const double* bias, double* const* orow) {
  std::size_t c = 0;
  for (; N - c >= 24; c += 24)
    mm_tile<R, 3>(xr, K, w, N, c, 0xFF, bias, orow);
  const std::size_t left = N - c;
  if (left == 0) return;
  const std::size_t ngroups = (left + 7) / 8;
  const std::size_t tail = left - 8 * (ngroups - 1);
  const __mmask8 last = static_cast<__mmask8>((1u << tail) - 1);
  if (ngroups == 3)
    mm_tile<R, 3>(xr, K, w, N, c, last, bias, orow);
  else if (ngroups == 2)
    mm_tile<R, 2>(xr, K, w, N, c, last, bias, orow);
  else
    mm_tile<R, 1>(xr, K, w, N, c, last, bias, orow);
}

}  // namespace avx512

// out[r, :] = sum_k x[r, k] * w[k, :] (+ bias), four rows at a time against
// register tiles of up to 24 columns with a masked last group.
inline void matmul_rows(const double* __restrict x, std::size_t xstride, std::size_t nrows,
                        const double* __restrict w, std::size_t K, std::size_t N,
                        const double* bias, double* __restrict out, std::size_t ostride) {
  std::size_t r = 0;
  for (; r + 4 <= nrows; r += 4) {
    const double* xr[4] = {x + r * xstride, x + (r + 1) * xstride, x + (r + 2) * xstride,
                           x + (r + 3) * xstride};
    double* orow[4] = {out + r * ostride, out + (r + 1) * ostride, out + (r + 2) * ostride,
                       out + (r + 3) * ostride};
    avx512::mm_rows<4>(xr, K, w, N, bias, orow);
  }
  for (; r < nrows; ++r) {
    const double* xr[1] = {x + r * xstride};
    double* orow[1] = {out + r * ostride};
    avx512::mm_rows<1>(xr, K, w, N, bias, orow);
  }
}

namespace avx512 {

// Gradient tile: R weight rows by G vector groups of the fan-in, batch terms
// accumulated in registers, then one addition into the existing gradients.
template <int R, int G>
inline void oa_tile(const double* __restrict dz, std::size_t dzstride, std::size_t nrows,
                    const double* __restrict x, std::size_t xstride, std::size_t o,
                    std::size_t c, __mmask8 last, std::size_t in, double* __restrict gw) {
  __m512d acc[R][G];
  for (int r = 0; r < R; ++r)
    for (int g = 0; g < G; ++g) acc[r][g] = _mm512_setzero_pd();
  for (std::size_t b = 0; b < nrows; ++b) {
    const double* xr = x + b * xstride + c;
    __m512d xv[G];
    for (int g = 0; g < G; ++g)
      xv[g] = (g == G - 1) ? _mm512_maskz_loadu_pd(last, xr + 8 * g)
                           : _mm512_loadu_pd(xr + 8 * g);
    for (int r = 0; r < R; ++r) {
      const __m512d d = _mm512_set1_pd(dz[b * dzstride + o + static_cast<std::size_t>(r)]);
      for (int g = 0; g < G; ++g) acc[r][g] = _mm512_fmadd_pd(d, xv[g], acc[r][g]);
    }
  }
  for (int r = 0; r < R; ++r) {
    double* grow = gw + (o + static_cast<std::size_t>(r)) * in + c;
    for (int g = 0; g < G; ++g) {
      const __mmask8 m = (g == G - 1) ? last : __mmask8(0xFF);
      _mm512_mask_storeu_pd(
          grow + 8 * g, m,
          _mm512_add_pd(_mm512_maskz_loadu_pd(m, grow + 8 * g), acc[r][g]));
    }
  }
}

template <int R>
inline void oa_rows(const double* dz, std::size_t dzstride, std::size_t nrows,
                    const double* x, std::size_t xstride, std::size_t o, std::size_t in,
                    double* gw) {
  std::size_t c = 0;
  for (; in - c >= 24; c += 24)
    oa_tile<R, 3>(dz, dzstride, nrows, x, xstride, o, c, 0xFF, in, gw);
  const std::size_t left = in - c;
  if (left == 0) return;
  const std::size_t ngroups = (left + 7) / 8;
  const std::size_t tail = left - 8 * (ngroups - 1);
  const __mmask8 last = static_cast<__mmask8>((1u << tail) - 1);
  if (ngroups == 3)
    oa_tile<R, 3>(dz, dzstride, nrows, x, xstride, o, c, last, in, gw);
  else if (ngroups == 2)
    oa_tile<R, 2>(dz, dzstride, nrows, x, xstride, o, c, last, in, gw);
  else
    oa_tile<R, 1>(dz, dzstride, nrows, x, xstride, o, c, last, in, gw);
}

}  // namespace avx512

// gw[o, :] += sum_b dz[b, o] * x[b, :]: four weight rows at a time against
// register tiles, batch-accumulated before touching gw.
inline void outer_accumulate(const double* __restrict dz, std::size_t dzstride,
                             std::size_t nrows, const double* __restrict x,
                             std::size_t xstride, std::size_t out, std::size_t in,
                             double* __restrict gw) {
  std::size_t o = 0;
  for (; o + 4 <= out; o += 4)
    avx512::oa_rows<4>(dz, dzstride, nrows, x, xstride, o, in, gw);
  for (; o < out; ++o)
    avx512::oa_rows<1>(dz, dzstride, nrows, x, xstride, o, in, gw);
}

#else  // portable fallbacks

// out[r, :] = sum_k x[r, k] * w[k, :] (+ bias). w is K x N row-major. Rows
// go two at a time against 48-wide output tiles that the vectorizer keeps in
// registers; every output element still accumulates its k-terms in the same
// fixed order, so results do not depend on the blocking.
inline void matmul_rows(const double* __restrict x, std::size_t xstride, std::size_t nrows,
                        const double* __restrict w, std::size_t K, std::size_t N,
                        const double* bias, double* __restrict out, std::size_t ostride) {
  constexpr std::size_t OT = 48;
  auto init_tile = [&](double* acc, std::size_t c, std::size_t len) {
    if (bias)
      for (std::size_t t = 0; t < len; ++t) acc[t] = bias[c + t];
    else
      for (std::size_t t = 0; t < len; ++t) acc[t] = 0.0;
  };

  std::size_t r = 0;
  for (; r + 2 <= nrows; r += 2) {
    const double* x0 = x + r * xstride;
    const double* x1 = x0 + xstride;
    double* o0 = out + r * ostride;
    double* o1 = o0 + ostride;
    for (std::size_t c = 0; c < N; c += OT) {
      const std::size_t len = std::min(OT, N - c);
      double a0[OT], a1[OT];
      init_tile(a0, c, len);
      init_tile(a1, c, len);
      if (len == OT) {
        for (std::size_t k = 0; k < K; ++k) {
          const double* wr = w + k * N + c;
          const double b0 = x0[k], b1 = x1[k];
          for (std::size_t t = 0; t < OT; ++t) {
            a0[t] += b0 * wr[t];
            a1[t] += b1 * wr[t];
          }
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const double* wr = w + k * N + c;
          const double b0 = x0[k], b1 = x1[k];
          for (std::size_t t = 0; t < len; ++t) {
            a0[t] += b0 * wr[t];
            a1[t] += b1 * wr[t];
          }
        }
      }
      for (std::size_t t = 0; t < len; ++t) {
        o0[c + t] = a0[t];
        o1[c + t] = a1[t];
      }
    }
  }
  if (r < nrows) {
    const double* xr = x + r * xstride;
    double* orow = out + r * ostride;
    for (std::size_t c = 0; c < N; c += OT) {
      const std::size_t len = std::min(OT, N - c);
      double acc[OT];
      init_tile(acc, c, len);
      if (len == OT) {
        for (std::size_t k = 0; k < K; ++k) {
          const double b = xr[k];
          const double* wr = w + k * N + c;
          for (std::size_t t = 0; t < OT; ++t) acc[t] += b * wr[t];
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const double b = xr[k];
          const double* wr = w + k * N + c;
          for (std::size_t t = 0; t < len; ++t) acc[t] += b * wr[t];
        }
      }
      for (std::size_t t = 0; t < len; ++t) orow[c + t] = acc[t];
    }
  }
}

// gw[o, :] += sum_b dz[b, o] * x[b, :], accumulated in register tiles over
// the batch before touching gw. Per (o, i) slot the b-terms keep their fixed
// order, followed by one addition into the existing gradient.
inline void outer_accumulate(const double* __restrict dz, std::size_t dzstride,
                             std::size_t nrows, const double* __restrict x,
                             std::size_t xstride, std::size_t out, std::size_t in,
                             double* __restrict gw) {
  constexpr std::size_t IT = 48;
  std::size_t o = 0;
  for (; o + 2 <= out; o += 2) {
    for (std::size_t c = 0; c < in; c += IT) {
      const std::size_t len = std::min(IT, in - c);
      double a0[IT], a1[IT];
      for (std::size_t t = 0; t < len; ++t) a0[t] = a1[t] = 0.0;
      if (len == IT) {
        for (std::size_t b = 0; b < nrows; ++b) {
          const double d0 = dz[b * dzstride + o];
          const double d1 = dz[b * dzstride + o + 1];
          const double* xr = x + b * xstride + c;
          for (std::size_t t = 0; t < IT; ++t) {
            a0[t] += d0 * xr[t];
            a1[t] += d1 * xr[t];
          }
        }
      } else {
        for (std::size_t b = 0; b < nrows; ++b) {
          const double d0 = dz[b * dzstride + o];
          const double d1 = dz[b * dzstride + o + 1];
          const double* xr = x + b * xstride + c;
          for (std::size_t t = 0; t < len; ++t) {
            a0[t] += d0 * xr[t];
            a1[t] += d1 * xr[t];
          }
        }
      }
      double* g0 = gw + o * in + c;
      double* g1 = g0 + in;
      for (std::size_t t = 0; t < len; ++t) {
        g0[t] += a0[t];
        g1[t] += a1[t];
      }
    }
  }
  if (o < out) {
    for (std::size_t c = 0; c < in; c += IT) {
      const std::size_t len = std::min(IT, in - c);
      double acc[IT];
      for (std::size_t t = 0; t < len; ++t) acc[t] = 0.0;
      for (std::size_t b = 0; b < nrows; ++b) {
        const double d = dz[b * dzstride + o];
        const double* xr = x + b * xstride + c;
        for (std::size_t t = 0; t < len; ++t) acc[t] += d * xr[t];
      }
      double* g = gw + o * in + c;
      for (std::size_t t = 0; t < len; ++t) g[t] += acc[t];
    }
  }
}

#endif  // __AVX512F__

// ELU(z) + 1, clamped so the result stays strictly positive in double
// precision even for extreme negative pre-activations.
inline double elu_plus_one(double z) {
  return z >= 0.0 ? z + 1.0 : std::exp(z < -744.0 ? -744.0 : z);
}

inline double hidden_apply(Hidden h, double z) {
  switch (h) {
    case Hidden::ReLU:
      return z > 0.0 ? z : 0.0;
    case Hidden::ELU:
      return z > 0.0 ? z : std::expm1(z);
    case Hidden::Tanh:
      return std::tanh(z);
    case Hidden::Squareplus:
      return 0.5 * (z + std::sqrt(z * z + 1.0));
  }
  return z;
}

// Derivative of the hidden activation recovered from its own output value.
inline double hidden_deriv(Hidden h, double a) {
  switch (h) {
    case Hidden::ReLU:
      return a > 0.0 ? 1.0 : 0.0;
    case Hidden::ELU:
      return a < 0.0 ? a + 1.0 : 1.0;  // exp(z) = ELU(z)+1 on the negative side
    case Hidden::Tanh:
      return 1.0 - a * a;
    case Hidden::Squareplus: {
      const double s = 4.0 * a * a;  // s' = 4a^2 / (4a^2 + 1)
      return s / (s + 1.0);
    }
  }
  return 1.0;
}

// Derivative of ELU(z)+1 from its output: exp(z) = f below 1, else 1.
inline double elu_plus_one_deriv(double f) { return f < 1.0 ? f : 1.0; }

}  // namespace detail

// One dense layer: weights [out x in], bias [1 x out], matching gradient
// slots, and an optional binary mask with the weight shape.
struct LayerParams {
  Matrix w;
  Matrix b;
  Matrix gw;
  Matrix gb;
  Matrix mask;  // empty when the layer is dense

  bool has_mask() const { return !mask.empty(); }
  std::size_t fan_out() const { return w.rows(); }
  std::size_t fan_in() const { return w.cols(); }
};

struct ParamStore {
  std::vector<LayerParams> layers;

  std::size_t in_width() const { return layers.front().fan_in(); }
  std::size_t out_width() const { return layers.back().fan_out(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }

  void zero_grads() {
    for (auto& l : layers) {
      l.gw.zero();
      l.gb.zero();
    }
  }

  // Zeroes every masked weight entry. Called after init and optimizer steps.
  void apply_masks() {
    for (auto& l : layers) {
      if (!l.has_mask()) continue;
      for (std::size_t i = 0; i < l.w.size(); ++i)
        if (l.mask[i] == 0.0) l.w[i] = 0.0;
    }
  }

  // Visits (value, grad) pairs in declaration order: per layer, weights
  // row-major then bias. Serialization and the optimizer share this order.
  template <class F>
  void for_each_param(F&& f) {
    for (auto& l : layers) {
      for (std::size_t i = 0; i < l.w.size(); ++i) f(l.w[i], l.gw[i]);
      for (std::size_t i = 0; i < l.b.size(); ++i) f(l.b[i], l.gb[i]);
    }
  }

  template <class F>
  void for_each_value(F&& f) const {
    for (const auto& l : layers) {
      for (std::size_t i = 0; i < l.w.size(); ++i) f(l.w[i]);
      for (std::size_t i = 0; i < l.b.size(); ++i) f(l.b[i]);
    }
  }

  bool grads_finite() const {
    for (const auto& l : layers)
      if (!l.gw.all_finite() || !l.gb.all_finite()) return false;
    return true;
  }

  bool values_finite() const {
    for (const auto& l : layers)
      if (!l.w.all_finite() || !l.b.all_finite()) return false;
    return true;
  }
};

// Glorot-uniform initialization: weights in [-a, a] with a = sqrt(6/(fan_in +
// fan_out)), biases zero. Deterministic for a given seed.
inline ParamStore init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw ConfigError("init_mlp: need at least an input and an output width");
  for (int s : layer_sizes)
    if (s <= 0) throw ConfigError("init_mlp: layer sizes must be positive");

  Rng rng(mix_seed(seed, 0));
  ParamStore ps;
  ps.layers.resize(layer_sizes.size() - 1);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto fan_in = static_cast<std::size_t>(layer_sizes[l]);
    const auto fan_out = static_cast<std::size_t>(layer_sizes[l + 1]);
    auto& layer = ps.layers[l];
    layer.w.resize(fan_out, fan_in);
    layer.b.resize(1, fan_out);
    layer.gw.resize(fan_out, fan_in);
    layer.gb.resize(1, fan_out);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] = rng.uniform(-a, a);
    layer.b.zero();
    layer.gw.zero();
    layer.gb.zero();
  }
  return ps;
}

// Reusable forward/backward workspace. All buffers are sized on first use and
// reused afterwards, which keeps repeated passes allocation-free.
struct MlpTape {
  Matrix input;              // copy of the batch fed to the net
  std::vector<Matrix> wt;    // transposed weights, for the forward kernel
  std::vector<Matrix> act;   // post-activations per layer; act.back() is the output
  std::vector<Matrix> delta; // backward scratch
  Matrix grad_input;

  const Matrix& output() const { return act.back(); }
};

// Copies the weight matrices transposed into the tape, the layout the
// forward kernel consumes. Node loops that evaluate the same parameters many
// times call this once and then forward with reuse_weights = true.
inline void mlp_stage_weights(const ParamStore& params, MlpTape& tape) {
  const std::size_t n_layers = params.layers.size();
  if (tape.wt.size() != n_layers) tape.wt.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.layers[l];
    const std::size_t in = layer.fan_in(), out = layer.fan_out();
    Matrix& wt = tape.wt[l];
    wt.resize(in, out);
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) wt(i, o) = layer.w(o, i);
  }
}

// Forward pass over the batch already placed in tape.input. Callers that
// assemble inputs directly into the tape use this to avoid a copy.
inline const Matrix& mlp_forward_prepared(const ParamStore& params, Activation act,
                                          MlpTape& tape, bool reuse_weights = false) {
  const std::size_t n_layers = params.layers.size();
  if (tape.input.cols() != params.in_width())
    throw DimensionError("mlp_forward: input width " + std::to_string(tape.input.cols()) +
                         " does not match first layer fan-in " +
                         std::to_string(params.in_width()));
  const std::size_t batch = tape.input.rows();

  if (!reuse_weights || tape.wt.size() != n_layers) mlp_stage_weights(params, tape);
  if (tape.act.size() != n_layers) tape.act.resize(n_layers);
  if (tape.delta.size() != n_layers) tape.delta.resize(n_layers);

  const Matrix* cur = &tape.input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = params.layers[l];
    const std::size_t in = layer.fan_in(), out = layer.fan_out();
    const Matrix& wt = tape.wt[l];

    Matrix& a = tape.act[l];
    a.resize(batch, out);
    detail::matmul_rows(cur->data(), in, batch, wt.data(), in, out, layer.b.data(),
                        a.data(), out);

    const bool last = (l + 1 == n_layers);
    if (!last) {
      switch (act.hidden) {
        case Hidden::Squareplus:
          for (std::size_t i = 0; i < a.size(); ++i) {
            const double z = a[i];
            a[i] = 0.5 * (z + std::sqrt(z * z + 1.0));
          }
          break;
        case Hidden::ReLU:
          for (std::size_t i = 0; i < a.size(); ++i) a[i] = a[i] > 0.0 ? a[i] : 0.0;
          break;
        default:
          for (std::size_t i = 0; i < a.size(); ++i)
            a[i] = detail::hidden_apply(act.hidden, a[i]);
      }
    } else if (act.output == Output::EluPlusOne) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] = detail::elu_plus_one(a[i]);
    }
    cur = &a;
  }
  return tape.act.back();
}

// Forward pass over a [B x in] batch; fills the tape and returns the output.
inline const Matrix& mlp_forward(const ParamStore& params, const Matrix& input,
                                 Activation act, MlpTape& tape) {
  tape.input.resize(input.rows(), input.cols());
  for (std::size_t i = 0; i < input.size(); ++i) tape.input[i] = input[i];
  return mlp_forward_prepared(params, act, tape);
}

// Convenience forward returning a copy of the output.
inline Matrix mlp_forward(const ParamStore& params, const Matrix& input, Activation act) {
  MlpTape tape;
  return mlp_forward(params, input, act, tape);
}

// Backward pass for the batch recorded in the tape. Accumulates into
// params.grads (caller zeroes when starting a new accumulation) and returns
// the gradient w.r.t. the input batch. Masked weights receive zero gradient.
inline const Matrix& mlp_backward(ParamStore& params, Activation act, MlpTape& tape,
                                  const Matrix& grad_output) {
  const std::size_t n_layers = params.layers.size();
  const std::size_t batch = tape.input.rows();
  if (tape.act.size() != n_layers || tape.act.back().rows() != batch)
    throw Error("mlp_backward: tape does not match a forward pass of these params");
  require_shape(grad_output, batch, params.out_width(), "mlp_backward grad_output");

  for (std::size_t li = n_layers; li-- > 0;) {
    auto& layer = params.layers[li];
    const std::size_t in = layer.fan_in(), out = layer.fan_out();
    const Matrix& a = tape.act[li];
    const Matrix& x = (li == 0) ? tape.input : tape.act[li - 1];

    // dz = upstream gradient times the activation derivative; one branch-free
    // loop per activation so the division/select vectorizes
    Matrix& dz = tape.delta[li];
    dz.resize(batch, out);
    const bool last = (li + 1 == n_layers);
    const Matrix& up = last ? grad_output : tape.grad_input;
    if (last) {
      if (act.output == Output::EluPlusOne) {
        for (std::size_t i = 0; i < dz.size(); ++i)
          dz[i] = up[i] * (a[i] < 1.0 ? a[i] : 1.0);
      } else {
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = up[i];
      }
    } else {
      switch (act.hidden) {
        case Hidden::Squareplus:
          for (std::size_t i = 0; i < dz.size(); ++i) {
            const double s = 4.0 * a[i] * a[i];
            dz[i] = up[i] * (s / (s + 1.0));
          }
          break;
        case Hidden::ReLU:
          for (std::size_t i = 0; i < dz.size(); ++i)
            dz[i] = a[i] > 0.0 ? up[i] : 0.0;
          break;
        case Hidden::ELU:
          for (std::size_t i = 0; i < dz.size(); ++i)
            dz[i] = up[i] * (a[i] < 0.0 ? a[i] + 1.0 : 1.0);
          break;
        case Hidden::Tanh:
          for (std::size_t i = 0; i < dz.size(); ++i)
            dz[i] = up[i] * (1.0 - a[i] * a[i]);
          break;
      }
    }

    // parameter gradients
    for (std::size_t r = 0; r < batch; ++r)
      detail::axpy(1.0, dz.row(r), layer.gb.data(), out);
    detail::outer_accumulate(dz.data(), out, batch, x.data(), in, out, in,
                             layer.gw.data());
    if (layer.has_mask()) {
      for (std::size_t i = 0; i < layer.gw.size(); ++i)
        if (layer.mask[i] == 0.0) layer.gw[i] = 0.0;
    }

    // gradient w.r.t. this layer's input: dz * w, with w read as [out x in]
    tape.grad_input.resize(batch, in);
    detail::matmul_rows(dz.data(), out, batch, layer.w.data(), out, in, nullptr,
                        tape.grad_input.data(), in);
  }
  return tape.grad_input;
}

// Adam with decoupled weight decay. Moments are stored flat in the same
// declaration order that for_each_param visits.
struct AdamState {
  long step_count = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::vector<double> m, v;
};

inline void adam_step(ParamStore& params, AdamState& st) {
  if (!params.grads_finite())
    throw NumericError("adam_step: non-finite gradient, step rejected");

  const std::size_t n = params.param_count();
  if (st.m.empty()) {
    st.m.assign(n, 0.0);
    st.v.assign(n, 0.0);
  } else if (st.m.size() != n || st.v.size() != n) {
    throw DimensionError("adam_step: moment buffers do not match parameter count");
  }

  ++st.step_count;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step_count));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step_count));

  std::size_t i = 0;
  params.for_each_param([&](double& w, double& g) {
    double& m = st.m[i];
    double& v = st.v[i];
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g * g;
    w -= st.lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps);
    w -= st.lr * st.weight_decay * w;
    g = 0.0;
    ++i;
  });
  params.apply_masks();

  if (!params.values_finite())
    throw NumericError("adam_step: parameters became non-finite");
}

}  // namespace umnn
