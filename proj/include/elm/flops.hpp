#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/network.hpp"

namespace elm {

// Cost unit: one multiply (with its accumulate) in matmul/conv work; pointwise
// ops are charged documented unit costs (sigmoid/GELU/exp 1 per value, divide
// 1, layer norm 3 per value). Reported GFLOPs treats each unit as two
// floating-point operations (multiply and add counted separately).
struct FlopsEntry {
  std::string name;
  uint64_t units = 0;
};

struct FlopsReport {
  std::vector<FlopsEntry> entries;
  uint64_t total_units() const;
  double gflops() const;  // 2 * total / 1e9
};

enum class AttentionVariant { kWmsa, kLmsa, kLewin, kLmwin };

// Dominant-term attention cost over an H x W token grid (one head dimension
// d_k, heads of them):
//   wmsa per window:  M^4 * d_k   (score products, per head)
//   lmsa per window:  4 * M^2 * d_k
//   lewin total:      H*W * M^2 * d_k * heads          (full-resolution grid)
//   lmwin total:      heads * (H*W*M^2*d_k/4 + H*W*d_k/M^2)
// The lmwin closed form models the half-resolution multiplicative design:
// the window branch runs on a quarter of the tokens and the local branch
// contributes the d_k/M^2 per-token remainder.
struct AttentionFlops {
  AttentionVariant variant;
  uint64_t per_window_per_head = 0;  // dominant score+value term
  uint64_t windows = 0;
  uint64_t total = 0;  // over heads and windows (closed form for lmwin/lewin)
};

AttentionFlops flops_attention(AttentionVariant variant, int M, int d_k, int heads, int H, int W);

// lewin.total / lmwin.total == 4 / (1 + 4/M^4) for any grid.
double lewin_lmwin_ratio(int M, int d_k, int heads, int H, int W);

// Per-module analytic cost of one forward pass at the given mosaic extents.
FlopsReport flops_model(const ElmformerConfig& config, int input_h, int input_w);

// Runs the real attention forward with the multiply counter on and compares
// the score-product bucket against the analytic dominant term.
struct EmpiricalCheck {
  uint64_t instrumented = 0;
  uint64_t analytic = 0;
  double ratio = 0.0;  // instrumented / analytic
};

EmpiricalCheck empirical_count_check(AttentionVariant variant, int M, int d_k, int heads, int H,
                                     int W, uint64_t seed);

}  // namespace elm
