#include "elm/flops.hpp"

#include <stdexcept>

#include "elm/attention.hpp"
#include "elm/counter.hpp"
#include "elm/rng.hpp"

namespace elm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

uint64_t u64(int64_t v) { return static_cast<uint64_t>(v); }

// One Lm-Win block over T tokens at C channels, window M.
uint64_t block_units(int64_t T, int64_t C, int64_t M, int64_t heads) {
  const int64_t hidden = 4 * C;
  int64_t units = 0;
  units += 3 * T * C;          // layer norm 1
  units += 3 * T * C * C;      // window-branch q/k/v
  units += T * C;              // query scaling
  units += T * M * M * C;      // window scores
  units += 2 * T * heads * M * M;  // window softmax (exp + divide)
  units += T * M * M * C;      // window attention * values
  units += 3 * T * C * C;      // local-branch q/k/v
  units += T * C;              // query scaling
  units += 4 * T * C;          // local scores (4-token tiles)
  units += 8 * T * heads;      // local softmax
  units += 4 * T * C;          // local attention * values
  units += T * C;              // per-head multiplicative fusion
  units += T * C * C;          // shared output projection
  units += 3 * T * C;          // layer norm 2
  units += T * C * hidden;     // LeFF linear in
  units += T * hidden;         // GELU
  units += T * hidden * 9;     // depthwise 3x3
  units += T * hidden;         // GELU
  units += T * hidden * C;     // LeFF linear out
  return u64(units);
}

}  // namespace

uint64_t FlopsReport::total_units() const {
  uint64_t t = 0;
  for (const FlopsEntry& e : entries) t += e.units;
  return t;
}

double FlopsReport::gflops() const { return 2.0 * static_cast<double>(total_units()) / 1e9; }

AttentionFlops flops_attention(AttentionVariant variant, int M, int d_k, int heads, int H, int W) {
  require(M >= 1 && d_k >= 1 && heads >= 1 && H >= 1 && W >= 1,
          "flops_attention: arguments must be positive");
  require(H % M == 0 && W % M == 0, "flops_attention: grid " + std::to_string(H) + "x" +
                                        std::to_string(W) + " not divisible by window " +
                                        std::to_string(M));
  const uint64_t hw = u64(H) * u64(W);
  const uint64_t m2 = u64(M) * u64(M);
  const uint64_t m4 = m2 * m2;

  AttentionFlops f;
  f.variant = variant;
  switch (variant) {
    case AttentionVariant::kWmsa:
      f.per_window_per_head = m4 * u64(d_k);
      f.windows = hw / m2;
      f.total = f.windows * u64(heads) * f.per_window_per_head;
      break;
    case AttentionVariant::kLmsa:
      require(M % 2 == 0, "flops_attention: local variant needs an even window");
      f.per_window_per_head = 4 * m2 * u64(d_k);
      f.windows = hw / m2;
      f.total = f.windows * u64(heads) * f.per_window_per_head;
      break;
    case AttentionVariant::kLewin:
      f.per_window_per_head = m4 * u64(d_k);
      f.windows = hw / m2;
      f.total = f.windows * u64(heads) * f.per_window_per_head;  // = HW * M^2 * d_k * heads
      break;
    case AttentionVariant::kLmwin: {
      require(M % 2 == 0, "flops_attention: local variant needs an even window");
      require(H % 2 == 0 && W % 2 == 0, "flops_attention: lmwin grid extents must be even");
      require((hw * u64(d_k)) % m2 == 0, "flops_attention: lmwin closed form needs M^2 | H*W*d_k");
      f.per_window_per_head = m4 * u64(d_k) + 4 * m2 * u64(d_k);  // both branches, one window
      f.windows = (hw / 4) / m2;  // windows of the half-resolution grid
      // Closed-form cost model, not windows * per_window: quarter-grid window
      // branch plus the d_k/M^2 per-token local remainder.
      f.total = u64(heads) * (hw * m2 * u64(d_k) / 4 + hw * u64(d_k) / m2);
      break;
    }
  }
  return f;
}

double lewin_lmwin_ratio(int M, int d_k, int heads, int H, int W) {
  const AttentionFlops le = flops_attention(AttentionVariant::kLewin, M, d_k, heads, H, W);
  const AttentionFlops lm = flops_attention(AttentionVariant::kLmwin, M, d_k, heads, H, W);
  return static_cast<double>(le.total) / static_cast<double>(lm.total);
}

FlopsReport flops_model(const ElmformerConfig& config, int input_h, int input_w) {
  config.validate_input(input_h, input_w);
  FlopsReport rep;
  auto push = [&rep](const std::string& name, uint64_t units) {
    rep.entries.push_back({name, units});
  };

  const int64_t C = config.base_channels;
  const int64_t h2 = input_h / 2, w2 = input_w / 2;
  {
    const int64_t px = h2 * w2;
    int64_t units = 0;
    units += px * (C / 2) * 4 * 9;        // 3x3 over packed planes
    units += px * (C / 2) * 9;            // strided 3x3 over the mosaic
    units += 2 * px * (C / 2) * (C / 2);  // the two 1x1 gates
    units += 2 * px * (C / 2);            // sigmoids
    units += 2 * px * (C / 2);            // gating products
    push("bfp", u64(units));
  }

  for (int s = 0; s < config.depth; ++s) {
    const int64_t cs = config.stage_channels(s);
    const int64_t eh = input_h >> (s + 1), ew = input_w >> (s + 1);
    const int64_t T = eh * ew;
    push("encoder" + std::to_string(s),
         2 * block_units(T, cs, config.window, config.heads_at(s)));
    const int64_t out_px = (eh / 2) * (ew / 2);
    push("down" + std::to_string(s), u64(out_px * (2 * cs) * cs * 16));
  }

  {
    const int s = config.depth;
    const int64_t cs = config.stage_channels(s);
    const int64_t T = (input_h >> (s + 1)) * static_cast<int64_t>(input_w >> (s + 1));
    push("bottleneck", 2 * block_units(T, cs, config.bottleneck_window, config.heads_at(s)));
  }

  for (int s = config.depth - 1; s >= 0; --s) {
    const int64_t cs = config.stage_channels(s);
    const int64_t eh = input_h >> (s + 1), ew = input_w >> (s + 1);
    const int64_t T = eh * ew;
    const int64_t in_px = (eh / 2) * (ew / 2);
    push("up" + std::to_string(s), u64(in_px * (2 * cs) * cs * 4));
    push("merge" + std::to_string(s), u64(T * (2 * cs) * cs));
    push("decoder" + std::to_string(s),
         2 * block_units(T, cs, config.window, config.heads_at(s)));
  }

  {
    const int64_t px = h2 * w2;
    push("final_up", u64(px * C * (C / 2) * 4));
    push("output_conv", u64(static_cast<int64_t>(input_h) * input_w * (C / 2) * 9));
  }
  return rep;
}

EmpiricalCheck empirical_count_check(AttentionVariant variant, int M, int d_k, int heads, int H,
                                     int W, uint64_t seed) {
  const AttentionFlops analytic = flops_attention(variant, M, d_k, heads, H, W);
  const int C = heads * d_k;
  const bool half_grid = variant == AttentionVariant::kLmwin;
  const int fh = half_grid ? H / 2 : H;
  const int fw = half_grid ? W / 2 : W;
  require(fh % M == 0 && fw % M == 0, "empirical_count_check: grid not divisible by window");

  Rng rng(mix_seed(seed, 0x636f756e74ull));
  Tensor x = Tensor::zeros({C, fh, fw});
  for (double& v : x.vec()) v = rng.uniform(0.0, 1.0);

  MulCounter counter;
  {
    NoGradGuard ng;
    CounterScope scope(counter);
    Tensor win = window_partition(x, M);
    switch (variant) {
      case AttentionVariant::kWmsa:
      case AttentionVariant::kLewin: {
        WmsaWeights w = make_wmsa_weights(C, heads, M, rng);
        wmsa(win, w);
        break;
      }
      case AttentionVariant::kLmsa: {
        LmsaWeights w = make_lmsa_weights(C, heads, rng);
        lmsa(win, w);
        break;
      }
      case AttentionVariant::kLmwin: {
        WmsaWeights ww = make_wmsa_weights(C, heads, M, rng);
        LmsaWeights lw = make_lmsa_weights(C, heads, rng);
        wmsa(win, ww);
        lmsa(win, lw);
        break;
      }
    }
  }

  EmpiricalCheck check;
  check.instrumented = counter.attn_scores;
  check.analytic = analytic.total;
  check.ratio = analytic.total == 0
                    ? 0.0
                    : static_cast<double>(check.instrumented) / static_cast<double>(check.analytic);
  return check;
}

}  // namespace elm
