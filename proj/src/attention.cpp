#include "elm/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "elm/counter.hpp"

namespace elm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor trunc_normal_param(const std::vector<int>& shape, Rng& rng, double stddev = 0.02) {
  Tensor t = Tensor::zeros(shape, true);
  for (double& v : t.vec()) v = rng.trunc_normal(stddev);
  return t;
}

Tensor zeros_param(const std::vector<int>& shape) { return Tensor::zeros(shape, true); }

Tensor ones_param(const std::vector<int>& shape) {
  Tensor t = Tensor::full(shape, 1.0);
  t.requires_grad = true;
  t.grad_ptr();
  return t;
}

int window_from_tokens(int token_count, const char* op) {
  const int M = static_cast<int>(std::lround(std::sqrt(static_cast<double>(token_count))));
  require(M * M == token_count, std::string(op) + ": token count " + std::to_string(token_count) +
                                    " is not a square");
  return M;
}

// Shared projection step: [N*T, C] rows to per-head layout [N, heads, T, d_k].
Tensor project_heads(const Tensor& flat, const Tensor& weight, const Tensor& bias, int n, int t,
                     int heads, int dk) {
  Tensor p = add_rowvec(matmul(flat, weight), bias);
  p = reshape(p, {n, t, heads, dk});
  return permute(p, {0, 2, 1, 3});
}

}  // namespace

WmsaWeights make_wmsa_weights(int channels, int heads, int window, Rng& rng) {
  require(heads >= 1 && channels % heads == 0,
          "wmsa: head count " + std::to_string(heads) + " must divide channels " +
              std::to_string(channels));
  require(window >= 1, "wmsa: window size must be positive");
  WmsaWeights w;
  w.channels = channels;
  w.heads = heads;
  w.window = window;
  w.w_q = trunc_normal_param({channels, channels}, rng);
  w.w_k = trunc_normal_param({channels, channels}, rng);
  w.w_v = trunc_normal_param({channels, channels}, rng);
  w.b_q = zeros_param({channels});
  w.b_k = zeros_param({channels});
  w.b_v = zeros_param({channels});
  const int span = 2 * window - 1;
  w.bias_table = zeros_param({heads, span * span});
  return w;
}

LmsaWeights make_lmsa_weights(int channels, int heads, Rng& rng) {
  require(heads >= 1 && channels % heads == 0,
          "lmsa: head count " + std::to_string(heads) + " must divide channels " +
              std::to_string(channels));
  LmsaWeights w;
  w.channels = channels;
  w.heads = heads;
  w.p_q = trunc_normal_param({channels, channels}, rng);
  w.p_k = trunc_normal_param({channels, channels}, rng);
  w.p_v = trunc_normal_param({channels, channels}, rng);
  w.b_q = zeros_param({channels});
  w.b_k = zeros_param({channels});
  w.b_v = zeros_param({channels});
  return w;
}

LeffWeights make_leff_weights(int channels, Rng& rng) {
  require(channels >= 1, "leff: channels must be positive");
  const int hidden = 4 * channels;
  LeffWeights w;
  w.channels = channels;
  w.w1 = trunc_normal_param({channels, hidden}, rng);
  w.b1 = zeros_param({hidden});
  w.dw_k = trunc_normal_param({hidden, 1, 3, 3}, rng);
  w.dw_b = zeros_param({hidden});
  w.w2 = trunc_normal_param({hidden, channels}, rng);
  w.b2 = zeros_param({channels});
  return w;
}

BlockWeights make_block_weights(int channels, int heads, int window, Rng& rng) {
  require(window >= 2 && window % 2 == 0,
          "block: window size " + std::to_string(window) + " must be even (2x2 sub-tiles)");
  BlockWeights b;
  b.channels = channels;
  b.heads = heads;
  b.window = window;
  b.ln1_g = ones_param({channels});
  b.ln1_b = zeros_param({channels});
  b.ln2_g = ones_param({channels});
  b.ln2_b = zeros_param({channels});
  b.wmsa = make_wmsa_weights(channels, heads, window, rng);
  b.lmsa = make_lmsa_weights(channels, heads, rng);
  b.out_proj = trunc_normal_param({channels, channels}, rng);
  b.out_b = zeros_param({channels});
  b.leff = make_leff_weights(channels, rng);
  return b;
}

Tensor relative_position_bias(int M, const Tensor& bias_table) {
  require(M >= 1, "relative_position_bias: window size must be positive");
  const int span = 2 * M - 1;
  require(bias_table.ndim() == 2 && bias_table.dim(1) == span * span,
          "relative_position_bias: table " + shape_str(bias_table.shape) + " does not provide " +
              std::to_string(span * span) + " offsets for window size " + std::to_string(M));
  const int heads = bias_table.dim(0);
  const int T = M * M;

  auto offset_index = [M, span](int i, int j) {
    const int dy = (j / M) - (i / M);
    const int dx = (j % M) - (i % M);
    return (dy + M - 1) * span + (dx + M - 1);
  };

  Tensor out = Tensor::zeros({heads, T, T});
  const double* tab = bias_table.ptr();
  double* po = out.ptr();
  for (int h = 0; h < heads; ++h) {
    const double* trow = tab + static_cast<size_t>(h) * span * span;
    double* orow = po + static_cast<size_t>(h) * T * T;
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < T; ++j) orow[static_cast<size_t>(i) * T + j] = trow[offset_index(i, j)];
  }
  attach(out, {bias_table}, [heads, T, offset_index, span](Tensor& o) {
    Tensor& p = o.node->parents[0];
    if (!p.requires_grad) return;
    const double* g = o.grad->data();
    double* pg = p.grad_ptr();
    for (int h = 0; h < heads; ++h) {
      const double* grow = g + static_cast<size_t>(h) * T * T;
      double* prow = pg + static_cast<size_t>(h) * span * span;
      for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) prow[offset_index(i, j)] += grow[static_cast<size_t>(i) * T + j];
    }
  });
  return out;
}

Tensor wmsa(const Tensor& windows, const WmsaWeights& w) {
  require(windows.ndim() == 3, "wmsa: expected [N,M*M,C] windows, got " + shape_str(windows.shape));
  const int N = windows.dim(0), T = windows.dim(1), C = windows.dim(2);
  require(C == w.channels, "wmsa: channel count " + std::to_string(C) + " does not match weights (" +
                               std::to_string(w.channels) + ")");
  require(T == w.window * w.window, "wmsa: token count " + std::to_string(T) +
                                        " does not match window size " + std::to_string(w.window));
  const int heads = w.heads, dk = C / heads;

  Tensor flat = reshape(windows, {N * T, C});
  Tensor q = project_heads(flat, w.w_q, w.b_q, N, T, heads, dk);
  Tensor k = project_heads(flat, w.w_k, w.b_k, N, T, heads, dk);
  Tensor v = project_heads(flat, w.w_v, w.b_v, N, T, heads, dk);
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(dk)));

  Tensor scores;
  {
    ScoreRegion score_region;
    scores = bmm(q, k, true);  // [N,heads,T,T]
  }
  scores = add_bcast0(scores, relative_position_bias(w.window, w.bias_table));
  Tensor attn = softmax_lastdim(scores);
  return bmm(attn, v);  // [N,heads,T,dk]
}

Tensor lmsa(const Tensor& windows, const LmsaWeights& w) {
  require(windows.ndim() == 3, "lmsa: expected [N,M*M,C] windows, got " + shape_str(windows.shape));
  const int N = windows.dim(0), T = windows.dim(1), C = windows.dim(2);
  require(C == w.channels, "lmsa: channel count " + std::to_string(C) + " does not match weights (" +
                               std::to_string(w.channels) + ")");
  const int M = window_from_tokens(T, "lmsa");
  require(M % 2 == 0, "lmsa: window size " + std::to_string(M) + " must be even");
  const int heads = w.heads, dk = C / heads;
  const int groups = N * (T / 4);

  Tensor grouped = subwindow_rearrange(windows);  // [N,T/4,4,C]
  Tensor flat = reshape(grouped, {groups * 4, C});
  Tensor q = project_heads(flat, w.p_q, w.b_q, groups, 4, heads, dk);
  Tensor k = project_heads(flat, w.p_k, w.b_k, groups, 4, heads, dk);
  Tensor v = project_heads(flat, w.p_v, w.b_v, groups, 4, heads, dk);
  q = scale(q, 1.0 / std::sqrt(static_cast<double>(dk)));

  Tensor scores;
  {
    ScoreRegion score_region;
    scores = bmm(q, k, true);  // [G,heads,4,4]
  }
  Tensor attn = softmax_lastdim(scores);
  Tensor z = bmm(attn, v);  // [G,heads,4,dk]

  z = permute(z, {0, 2, 1, 3});         // [G,4,heads,dk]
  z = reshape(z, {N, T / 4, 4, C});
  z = subwindow_restore(z, M);          // [N,T,C]
  z = reshape(z, {N, T, heads, dk});
  return permute(z, {0, 2, 1, 3});      // [N,heads,T,dk]
}

Tensor fuse_heads(const Tensor& y, const Tensor& z, const Tensor& out_proj, const Tensor& out_b) {
  require(y.ndim() == 4, "fuse_heads: expected [N,heads,T,d_k], got " + shape_str(y.shape));
  require(y.shape == z.shape, "fuse_heads: branch shapes differ " + shape_str(y.shape) + " vs " +
                                  shape_str(z.shape));
  const int N = y.dim(0), heads = y.dim(1), T = y.dim(2), dk = y.dim(3);
  const int C = heads * dk;
  require(out_proj.ndim() == 2 && out_proj.dim(0) == C && out_proj.dim(1) == C,
          "fuse_heads: projection " + shape_str(out_proj.shape) + " must be [" + std::to_string(C) +
              "," + std::to_string(C) + "]");
  Tensor fused = mul(y, z);
  fused = permute(fused, {0, 2, 1, 3});  // [N,T,heads,dk]
  fused = reshape(fused, {N * T, C});
  Tensor out = add_rowvec(matmul(fused, out_proj), out_b);
  return reshape(out, {N, T, C});
}

Tensor leff(const Tensor& tokens, const LeffWeights& w, int h, int wd) {
  require(tokens.ndim() == 2, "leff: expected [T,C] tokens, got " + shape_str(tokens.shape));
  require(tokens.dim(0) == h * wd, "leff: token count " + std::to_string(tokens.dim(0)) +
                                       " does not match extents " + std::to_string(h) + "x" +
                                       std::to_string(wd));
  require(tokens.dim(1) == w.channels, "leff: channel count mismatch");
  const int hidden = 4 * w.channels;

  Tensor a = gelu(add_rowvec(matmul(tokens, w.w1), w.b1));  // [T,4C]
  Tensor m = tokens_to_chw(a, hidden, h, wd);
  ConvSpec dw_spec{hidden, hidden, 3, 3, 1, 1, true};
  m = gelu(conv2d(m, dw_spec, w.dw_k, w.dw_b));
  Tensor t = chw_to_tokens(m);  // [T,4C]
  return add_rowvec(matmul(t, w.w2), w.b2);  // [T,C]
}

Tensor lmwin_block(const Tensor& x, const BlockWeights& bw) {
  require(x.ndim() == 3, "block: expected [C,h,w] features, got " + shape_str(x.shape));
  const int C = x.dim(0), h = x.dim(1), wd = x.dim(2);
  require(C == bw.channels, "block: channel count " + std::to_string(C) +
                                " does not match weights (" + std::to_string(bw.channels) + ")");
  const int M = bw.window;
  require(h % M == 0 && wd % M == 0, "block: extents " + std::to_string(h) + "x" +
                                         std::to_string(wd) + " are not divisible by window size " +
                                         std::to_string(M));

  Tensor tokens = chw_to_tokens(x);  // [T,C]
  Tensor n1 = layer_norm(tokens, bw.ln1_g, bw.ln1_b, kLayerNormEps);
  Tensor win = window_partition_tokens(n1, h, wd, M);  // [N,M*M,C]
  Tensor y = wmsa(win, bw.wmsa);
  Tensor z = lmsa(win, bw.lmsa);
  Tensor fused = fuse_heads(y, z, bw.out_proj, bw.out_b);     // [N,M*M,C]
  Tensor sa = window_reverse_tokens(fused, h, wd, M);         // [T,C]
  Tensor x_sa = add(sa, tokens);

  Tensor n2 = layer_norm(x_sa, bw.ln2_g, bw.ln2_b, kLayerNormEps);
  Tensor ff = leff(n2, bw.leff, h, wd);
  Tensor out = add(ff, x_sa);
  return tokens_to_chw(out, C, h, wd);
}

}  // namespace elm
