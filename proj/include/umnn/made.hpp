#pragma once

#include <cstdint>
#include <vector>

#include "umnn/nn.hpp"

namespace umnn {

// Masked autoregressive network producing, for each dimension i (1-based),
// a q-dimensional embedding h^i followed by one scalar offset beta^i. Output
// block i occupies columns [i*(q+1), (i+1)*(q+1)) with beta last.
//
// Degree assignment: input k carries degree k+1; hidden units take degrees
// 1..d-1 round-robin (degree 1 when d == 1); output block i carries degree
// i+1 and connects only to hidden units of strictly smaller degree. There
// are no direct input-to-output connections, so block i depends on inputs
// 1..i-1 exactly, and block 1 is constant.
inline std::vector<Matrix> build_made_masks(int d, const std::vector<int>& hidden_sizes,
                                            int q) {
  if (d < 1) throw ConfigError("made masks: dimension must be >= 1");
  if (q < 0) throw ConfigError("made masks: embedding size must be >= 0");

  const int hidden_degree_range = d > 1 ? d - 1 : 1;
  std::vector<std::vector<int>> degrees;
  degrees.emplace_back();
  for (int k = 0; k < d; ++k) degrees.back().push_back(k + 1);
  for (int width : hidden_sizes) {
    if (width < 1) throw ConfigError("made masks: hidden width must be >= 1");
    degrees.emplace_back();
    for (int j = 0; j < width; ++j) degrees.back().push_back(1 + j % hidden_degree_range);
  }

  std::vector<Matrix> masks;
  for (std::size_t l = 1; l < degrees.size(); ++l) {
    const auto& prev = degrees[l - 1];
    const auto& cur = degrees[l];
    Matrix m(cur.size(), prev.size());
    for (std::size_t o = 0; o < cur.size(); ++o)
      for (std::size_t i = 0; i < prev.size(); ++i)
        m(o, i) = cur[o] >= prev[i] ? 1.0 : 0.0;
    masks.push_back(std::move(m));
  }

  // Output layer: strict inequality, replicated over the q+1 slots per block.
  const auto& last_hidden = degrees.back();
  Matrix out_mask(static_cast<std::size_t>(d) * (q + 1), last_hidden.size());
  for (int i = 0; i < d; ++i)
    for (int s = 0; s <= q; ++s)
      for (std::size_t j = 0; j < last_hidden.size(); ++j)
        out_mask(static_cast<std::size_t>(i) * (q + 1) + s, j) =
            (i + 1 > last_hidden[j]) ? 1.0 : 0.0;
  masks.push_back(std::move(out_mask));
  return masks;
}

struct MadeNet {
  ParamStore params;
  int d = 0;
  int q = 0;
  std::vector<int> hidden_sizes;
  Hidden hidden = Hidden::ELU;

  Activation activation() const { return {hidden, Output::Linear}; }
  int out_width() const { return d * (q + 1); }

  // Column ranges of dimension i's output block (0-based).
  int h_col(int i) const { return i * (q + 1); }
  int beta_col(int i) const { return i * (q + 1) + q; }
};

inline MadeNet make_made(int d, const std::vector<int>& hidden_sizes, int q,
                         std::uint64_t seed, Hidden hidden = Hidden::ELU) {
  std::vector<int> sizes;
  sizes.push_back(d);
  sizes.insert(sizes.end(), hidden_sizes.begin(), hidden_sizes.end());
  sizes.push_back(d * (q + 1));

  MadeNet net;
  net.params = init_mlp(sizes, seed);
  net.d = d;
  net.q = q;
  net.hidden_sizes = hidden_sizes;
  net.hidden = hidden;

  auto masks = build_made_masks(d, hidden_sizes, q);
  for (std::size_t l = 0; l < masks.size(); ++l)
    net.params.layers[l].mask = std::move(masks[l]);
  net.params.apply_masks();
  return net;
}

}  // namespace umnn
