#pragma once

#include "elm/ops.hpp"
#include "elm/rng.hpp"
#include "elm/tensor.hpp"

namespace elm {

inline constexpr double kLayerNormEps = 1e-5;

// Window self-attention over M*M tokens with a learned relative position
// bias. The table holds one value per head and per relative offset
// (2M-1 choices per axis).
struct WmsaWeights {
  int channels = 0;
  int heads = 0;
  int window = 0;  // M
  Tensor w_q, w_k, w_v;    // [C,C]
  Tensor b_q, b_k, b_v;    // [C]
  Tensor bias_table;       // [heads, (2M-1)*(2M-1)]
};

// Local attention over the 2x2 sub-tiles of each window; no position bias
// (every pair of the 4 tokens is adjacent), same 1/sqrt(d_k) scaling.
struct LmsaWeights {
  int channels = 0;
  int heads = 0;
  Tensor p_q, p_k, p_v;  // [C,C]
  Tensor b_q, b_k, b_v;  // [C]
};

// Token MLP with a depthwise 3x3 between the two linears: C -> 4C -> 4C -> C.
struct LeffWeights {
  int channels = 0;
  Tensor w1, b1;      // [C,4C],[4C]
  Tensor dw_k, dw_b;  // [4C,1,3,3],[4C]
  Tensor w2, b2;      // [4C,C],[C]
};

struct BlockWeights {
  int channels = 0;
  int heads = 0;
  int window = 0;
  Tensor ln1_g, ln1_b;
  Tensor ln2_g, ln2_b;
  WmsaWeights wmsa;
  LmsaWeights lmsa;
  Tensor out_proj, out_b;  // shared projection applied after head fusion
  LeffWeights leff;
};

WmsaWeights make_wmsa_weights(int channels, int heads, int window, Rng& rng);
LmsaWeights make_lmsa_weights(int channels, int heads, Rng& rng);
LeffWeights make_leff_weights(int channels, Rng& rng);
BlockWeights make_block_weights(int channels, int heads, int window, Rng& rng);

// Expands the table to [heads, M*M, M*M]: entry (h,i,j) is the table value
// for the offset of token j from token i. Pairs with equal offset share one
// table entry.
Tensor relative_position_bias(int M, const Tensor& bias_table);

// windows [N,M*M,C] -> per-head outputs [N,heads,M*M,d_k]
Tensor wmsa(const Tensor& windows, const WmsaWeights& w);
Tensor lmsa(const Tensor& windows, const LmsaWeights& w);

// Elementwise per-head product of the two attention outputs, heads re-packed
// to channels, then one shared projection. [N,heads,M*M,d_k] -> [N,M*M,C]
Tensor fuse_heads(const Tensor& y, const Tensor& z, const Tensor& out_proj, const Tensor& out_b);

// tokens [T,C] with T == h*w
Tensor leff(const Tensor& tokens, const LeffWeights& w, int h, int wd);

// x [C,h,w]; both residual branches: attention fusion, then LeFF.
Tensor lmwin_block(const Tensor& x, const BlockWeights& bw);

}  // namespace elm
