#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "elm/attention.hpp"
#include "elm/bayer.hpp"
#include "elm/bfp.hpp"
#include "elm/ops.hpp"
#include "elm/tensor.hpp"

namespace elm {

// U-shaped restorer: BFP stem (halves resolution), depth encoder stages of
// two Lm-Win blocks each with 4x4/s2 downsampling between, a two-block
// bottleneck at a smaller window, mirrored decoder stages with 2x2/s2
// transposed-conv upsampling and 1x1 skip fusion, and a final upsample back
// to mosaic resolution. The 3x3 output conv starts at zero so the global
// residual makes the initial network an identity.
struct ElmformerConfig {
  int base_channels = 32;
  int depth = 4;
  int window = 8;
  int bottleneck_window = 4;
  int head_dim = 16;                // used when heads_per_stage is empty
  std::vector<int> heads_per_stage; // size depth+1 when given
  uint64_t seed = 0;

  int stage_channels(int stage) const { return base_channels << stage; }
  int heads_at(int stage) const;
  int window_at(int stage) const { return stage == depth ? bottleneck_window : window; }

  void validate() const;
  void validate_input(int h, int w) const;  // extents the forward pass will accept
};

struct ConvLayer {
  ConvSpec spec;
  Tensor k, b;
};

struct StagePair {
  BlockWeights block1, block2;
};

struct ElmformerWeights {
  ElmformerConfig config;
  BfpWeights bfp;
  std::vector<StagePair> encoder;  // stage s: channels C*2^s
  std::vector<ConvLayer> down;     // stage s -> s+1
  StagePair bottleneck;
  std::vector<ConvLayer> up;          // indexed by stage; applied deepest first
  std::vector<ConvLayer> skip_merge;  // 1x1 after [decoder; encoder] concat
  std::vector<StagePair> decoder;
  ConvLayer final_up;    // C -> C/2, back to full resolution
  ConvLayer final_conv;  // 3x3 to one channel, zero-initialized

  // Canonical parameter order; defines the checkpoint layout.
  void visit(const std::function<void(Tensor&)>& fn);
  int64_t parameter_count();
  void zero_grads();
};

ElmformerWeights build(const ElmformerConfig& config);

Tensor forward(const Tensor& mosaic, ElmformerWeights& w);  // [1,H,W] -> [1,H,W]
RawImage forward(const RawImage& raw, ElmformerWeights& w);

Tensor skip_merge_step(const Tensor& dec, const Tensor& enc, const ConvLayer& merge);

// Checkpoint container: magic "ELMC", little-endian u32 version=1, u32 config
// text length + bytes, u64 parameter count, parameters as f64, u8 optimizer
// flag, then (u64 step, first and second moments as f64) when present.
struct Checkpoint {
  ElmformerConfig config;
  std::vector<double> params;
  bool has_optimizer = false;
  uint64_t step = 0;
  std::vector<double> m, v;
};

Checkpoint snapshot(ElmformerWeights& w);
void load_into(ElmformerWeights& w, const Checkpoint& c);  // rejects layout mismatch
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

// Flat key=value configuration text (one pair per line, # comments).
std::map<std::string, std::string> read_config_file(const std::string& path);
std::string config_to_text(const ElmformerConfig& c);
ElmformerConfig model_config_from(const std::map<std::string, std::string>& kv);
// Keys model_config_from understands (for unknown-key rejection by callers).
const std::vector<std::string>& model_config_keys();

}  // namespace elm
