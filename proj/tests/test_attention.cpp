// Dense-attention oracles: the windowed and sub-window attention paths are
// recomputed here with plain loops and compared elementwise.
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "elm/attention.hpp"
#include "elm/ops.hpp"
#include "elm/rng.hpp"
#include "elm/tensor.hpp"
#include "helpers.hpp"

using elm::Rng;
using elm::Tensor;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// rows [T,C] x weight [C,C] + bias, plain loops.
std::vector<double> project(const double* rows, int T, int C, const double* w, const double* b) {
  std::vector<double> out(static_cast<size_t>(T) * C, 0.0);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) {
      double acc = b[c];
      for (int u = 0; u < C; ++u) acc += rows[t * C + u] * w[u * C + c];
      out[t * C + c] = acc;
    }
  return out;
}

// Dense attention over an explicit token set, one head slice, optional bias.
// tokens: indices into q/k/v rows; bias(i,j) indexed by positions in `tokens`.
void dense_attention(const std::vector<double>& q, const std::vector<double>& k,
                     const std::vector<double>& v, int C, int head, int dk,
                     const std::vector<int>& tokens,
                     const std::function<double(int, int)>& bias,
                     std::vector<double>& out /* tokens.size() x dk */) {
  const int n = static_cast<int>(tokens.size());
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> scores(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int d = 0; d < dk; ++d)
        acc += q[tokens[i] * C + head * dk + d] * k[tokens[j] * C + head * dk + d];
      scores[i * n + j] = acc * inv + bias(i, j);
    }
  for (int i = 0; i < n; ++i) {
    double mx = scores[i * n];
    for (int j = 1; j < n; ++j) mx = std::max(mx, scores[i * n + j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      scores[i * n + j] = std::exp(scores[i * n + j] - mx);
      denom += scores[i * n + j];
    }
    for (int j = 0; j < n; ++j) scores[i * n + j] /= denom;
  }
  out.assign(static_cast<size_t>(n) * dk, 0.0);
  for (int i = 0; i < n; ++i)
    for (int d = 0; d < dk; ++d) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += scores[i * n + j] * v[tokens[j] * C + head * dk + d];
      out[i * dk + d] = acc;
    }
}

}  // namespace

TEST_CASE("relative position bias shares one table entry per offset") {
  const int M = 3, span = 2 * M - 1, heads = 2;
  Tensor table = Tensor::zeros({heads, span * span});
  for (int h = 0; h < heads; ++h)
    for (int s = 0; s < span * span; ++s) table.ptr()[h * span * span + s] = h * 1000.0 + s;

  Tensor bias = elm::relative_position_bias(M, table);
  REQUIRE(bias.shape == std::vector<int>({heads, M * M, M * M}));
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < M * M; ++i)
      for (int j = 0; j < M * M; ++j) {
        const int dy = j / M - i / M, dx = j % M - i % M;
        const double want = h * 1000.0 + (dy + M - 1) * span + (dx + M - 1);
        CHECK(bias.ptr()[(h * M * M + i) * M * M + j] == want);
      }

  // A window offers exactly (2M-1)^2 distinct offsets and uses all of them.
  std::vector<bool> seen(span * span, false);
  for (int i = 0; i < M * M; ++i)
    for (int j = 0; j < M * M; ++j)
      seen[static_cast<size_t>((j / M - i / M + M - 1) * span + (j % M - i % M + M - 1))] = true;
  for (bool s : seen) CHECK(s);

  CHECK_THROWS(elm::relative_position_bias(2, table));  // table sized for M=3
}

TEST_CASE("window attention matches a dense global oracle on one window") {
  Rng rng(61);
  const int M = 4, T = M * M, C = 8, heads = 2, dk = C / heads;
  elm::WmsaWeights w = elm::make_wmsa_weights(C, heads, M, rng);
  for (double& v : w.bias_table.vec()) v = rng.uniform(-0.5, 0.5);
  for (double& v : w.b_q.vec()) v = rng.uniform(-0.2, 0.2);
  for (double& v : w.b_k.vec()) v = rng.uniform(-0.2, 0.2);
  for (double& v : w.b_v.vec()) v = rng.uniform(-0.2, 0.2);

  Tensor windows = random_tensor({1, T, C}, rng);
  Tensor got = elm::wmsa(windows, w);
  REQUIRE(got.shape == std::vector<int>({1, heads, T, dk}));

  const std::vector<double> q = project(windows.ptr(), T, C, w.w_q.ptr(), w.b_q.ptr());
  const std::vector<double> k = project(windows.ptr(), T, C, w.w_k.ptr(), w.b_k.ptr());
  const std::vector<double> v = project(windows.ptr(), T, C, w.w_v.ptr(), w.b_v.ptr());

  const int span = 2 * M - 1;
  std::vector<int> all(T);
  for (int t = 0; t < T; ++t) all[t] = t;
  double worst = 0.0;
  for (int h = 0; h < heads; ++h) {
    std::vector<double> out;
    auto bias = [&](int i, int j) {
      const int dy = j / M - i / M, dx = j % M - i % M;
      return w.bias_table.ptr()[h * span * span + (dy + M - 1) * span + (dx + M - 1)];
    };
    dense_attention(q, k, v, C, h, dk, all, bias, out);
    for (int t = 0; t < T; ++t)
      for (int d = 0; d < dk; ++d)
        worst = std::max(worst,
                         std::abs(got.ptr()[((0 * heads + h) * T + t) * dk + d] - out[t * dk + d]));
  }
  CHECK_MESSAGE(worst < 1e-12, ("dense oracle disagreement " + std::to_string(worst)));
}

TEST_CASE("window attention treats windows independently") {
  Rng rng(62);
  const int M = 2, T = 4, C = 4, heads = 2;
  elm::WmsaWeights w = elm::make_wmsa_weights(C, heads, M, rng);
  for (double& v : w.bias_table.vec()) v = rng.uniform(-0.5, 0.5);

  Tensor both = random_tensor({2, T, C}, rng);
  Tensor first = Tensor::from({1, T, C},
                              std::vector<double>(both.ptr(), both.ptr() + T * C));
  Tensor all = elm::wmsa(both, w);
  Tensor solo = elm::wmsa(first, w);
  for (int64_t i = 0; i < solo.numel(); ++i) CHECK(all.ptr()[i] == solo.ptr()[i]);
}

TEST_CASE("sub-window attention matches a 4-token dense oracle per tile") {
  Rng rng(63);
  const int M = 4, T = M * M, C = 8, heads = 2, dk = C / heads;
  elm::LmsaWeights w = elm::make_lmsa_weights(C, heads, rng);
  for (double& v : w.b_q.vec()) v = rng.uniform(-0.2, 0.2);
  for (double& v : w.b_v.vec()) v = rng.uniform(-0.2, 0.2);

  Tensor windows = random_tensor({2, T, C}, rng);
  Tensor got = elm::lmsa(windows, w);
  REQUIRE(got.shape == std::vector<int>({2, heads, T, dk}));

  double worst = 0.0;
  auto no_bias = [](int, int) { return 0.0; };
  for (int n = 0; n < 2; ++n) {
    const double* rows = windows.ptr() + static_cast<size_t>(n) * T * C;
    const std::vector<double> q = project(rows, T, C, w.p_q.ptr(), w.b_q.ptr());
    const std::vector<double> k = project(rows, T, C, w.p_k.ptr(), w.b_k.ptr());
    const std::vector<double> v = project(rows, T, C, w.p_v.ptr(), w.b_v.ptr());
    for (int ta = 0; ta < M / 2; ++ta)
      for (int tb = 0; tb < M / 2; ++tb) {
        // The four window tokens of tile (ta, tb), slot order row-major.
        std::vector<int> tile;
        for (int da = 0; da < 2; ++da)
          for (int db = 0; db < 2; ++db) tile.push_back((2 * ta + da) * M + 2 * tb + db);
        for (int h = 0; h < heads; ++h) {
          std::vector<double> out;
          dense_attention(q, k, v, C, h, dk, tile, no_bias, out);
          for (int s = 0; s < 4; ++s)
            for (int d = 0; d < dk; ++d)
              worst = std::max(
                  worst, std::abs(got.ptr()[((n * heads + h) * T + tile[s]) * dk + d] -
                                  out[s * dk + d]));
        }
      }
  }
  CHECK_MESSAGE(worst < 1e-12, ("sub-window oracle disagreement " + std::to_string(worst)));
}

TEST_CASE("at window size 2 the local and window paths coincide") {
  // A 2x2 window is its own sub-tile, so with a zero bias table and shared
  // projections both attention variants compute the same function.
  Rng rng(64);
  const int C = 6, heads = 3;
  elm::LmsaWeights lw = elm::make_lmsa_weights(C, heads, rng);
  elm::WmsaWeights ww = elm::make_wmsa_weights(C, heads, 2, rng);
  ww.w_q = lw.p_q;
  ww.w_k = lw.p_k;
  ww.w_v = lw.p_v;
  ww.b_q = lw.b_q;
  ww.b_k = lw.b_k;
  ww.b_v = lw.b_v;  // bias_table stays zero

  Tensor windows = random_tensor({3, 4, C}, rng);
  CHECK(max_abs_diff(elm::lmsa(windows, lw), elm::wmsa(windows, ww)) < 1e-14);
}

TEST_CASE("head fusion multiplies branches then applies one projection") {
  Rng rng(65);
  const int N = 2, heads = 2, T = 4, dk = 3, C = heads * dk;
  Tensor y = random_tensor({N, heads, T, dk}, rng);
  Tensor z = random_tensor({N, heads, T, dk}, rng);
  Tensor proj = random_tensor({C, C}, rng);
  Tensor bias = random_tensor({C}, rng);
  Tensor got = elm::fuse_heads(y, z, proj, bias);
  REQUIRE(got.shape == std::vector<int>({N, T, C}));

  for (int n = 0; n < N; ++n)
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) {
        double acc = bias.ptr()[c];
        for (int h = 0; h < heads; ++h)
          for (int d = 0; d < dk; ++d) {
            const size_t idx = ((static_cast<size_t>(n) * heads + h) * T + t) * dk + d;
            acc += y.ptr()[idx] * z.ptr()[idx] * proj.ptr()[(h * dk + d) * C + c];
          }
        CHECK(std::abs(got.ptr()[(n * T + t) * C + c] - acc) < 1e-12);
      }
}

TEST_CASE("token feed-forward matches a loop oracle with the depthwise 3x3") {
  Rng rng(66);
  const int C = 4, hidden = 4 * C, h = 3, wd = 5, T = h * wd;
  elm::LeffWeights w = elm::make_leff_weights(C, rng);
  for (double& v : w.b1.vec()) v = rng.uniform(-0.1, 0.1);
  for (double& v : w.dw_b.vec()) v = rng.uniform(-0.1, 0.1);
  Tensor tokens = random_tensor({T, C}, rng);
  Tensor got = elm::leff(tokens, w, h, wd);
  REQUIRE(got.shape == std::vector<int>({T, C}));

  auto gelu_v = [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); };

  std::vector<double> a(static_cast<size_t>(T) * hidden, 0.0);
  for (int t = 0; t < T; ++t)
    for (int o = 0; o < hidden; ++o) {
      double acc = w.b1.ptr()[o];
      for (int u = 0; u < C; ++u) acc += tokens.ptr()[t * C + u] * w.w1.ptr()[u * hidden + o];
      a[t * hidden + o] = gelu_v(acc);
    }
  // Depthwise 3x3 over the h x wd token grid, token t = (row * wd + col).
  std::vector<double> m(static_cast<size_t>(T) * hidden, 0.0);
  for (int ch = 0; ch < hidden; ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < wd; ++c) {
        double acc = w.dw_b.ptr()[ch];
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx) {
            const int ir = r + dy - 1, ic = c + dx - 1;
            if (ir < 0 || ir >= h || ic < 0 || ic >= wd) continue;
            acc += a[(ir * wd + ic) * hidden + ch] * w.dw_k.ptr()[ch * 9 + dy * 3 + dx];
          }
        m[(r * wd + c) * hidden + ch] = gelu_v(acc);
      }
  for (int t = 0; t < T; ++t)
    for (int o = 0; o < C; ++o) {
      double acc = w.b2.ptr()[o];
      for (int u = 0; u < hidden; ++u) acc += m[t * hidden + u] * w.w2.ptr()[u * C + o];
      CHECK(std::abs(got.ptr()[t * C + o] - acc) < 1e-12);
    }
}

TEST_CASE("residual block reduces to the identity when both branches are zeroed") {
  Rng rng(67);
  elm::BlockWeights bw = elm::make_block_weights(8, 2, 4, rng);
  for (double& v : bw.out_proj.vec()) v = 0.0;
  for (double& v : bw.leff.w2.vec()) v = 0.0;
  Tensor x = random_tensor({8, 4, 8}, rng);
  Tensor y = elm::lmwin_block(x, bw);
  REQUIRE(y.shape == x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.ptr()[i] == x.ptr()[i]);
}

TEST_CASE("residual block composes the documented stages") {
  Rng rng(68);
  const int C = 8, h = 4, wd = 8, M = 4;
  elm::BlockWeights bw = elm::make_block_weights(C, 2, M, rng);
  for (double& v : bw.wmsa.bias_table.vec()) v = rng.uniform(-0.3, 0.3);
  Tensor x = random_tensor({C, h, wd}, rng);

  Tensor tokens = elm::chw_to_tokens(x);
  Tensor n1 = elm::layer_norm(tokens, bw.ln1_g, bw.ln1_b, elm::kLayerNormEps);
  Tensor win = elm::window_partition_tokens(n1, h, wd, M);
  Tensor fused = elm::fuse_heads(elm::wmsa(win, bw.wmsa), elm::lmsa(win, bw.lmsa), bw.out_proj,
                                 bw.out_b);
  Tensor x_sa = elm::add(elm::window_reverse_tokens(fused, h, wd, M), tokens);
  Tensor n2 = elm::layer_norm(x_sa, bw.ln2_g, bw.ln2_b, elm::kLayerNormEps);
  Tensor want = elm::tokens_to_chw(elm::add(elm::leff(n2, bw.leff, h, wd), x_sa), C, h, wd);

  CHECK(max_abs_diff(elm::lmwin_block(x, bw), want) == 0.0);
}

TEST_CASE("attention modules validate their inputs") {
  Rng rng(69);
  elm::WmsaWeights w = elm::make_wmsa_weights(4, 2, 2, rng);
  CHECK_THROWS(elm::wmsa(Tensor::zeros({1, 9, 4}), w));   // token count != M*M
  CHECK_THROWS(elm::wmsa(Tensor::zeros({1, 4, 6}), w));   // channel mismatch
  elm::LmsaWeights lw = elm::make_lmsa_weights(4, 2, rng);
  CHECK_THROWS(elm::lmsa(Tensor::zeros({1, 9, 4}), lw));  // odd window
  CHECK_THROWS(elm::lmsa(Tensor::zeros({1, 5, 4}), lw));  // not a square
  CHECK_THROWS(elm::make_wmsa_weights(5, 2, 2, rng));     // heads must divide channels
  elm::BlockWeights bw = elm::make_block_weights(4, 2, 2, rng);
  CHECK_THROWS(elm::lmwin_block(Tensor::zeros({4, 3, 4}), bw));  // grid not window-aligned
  CHECK_THROWS(elm::make_block_weights(4, 2, 3, rng));           // odd window size
}
