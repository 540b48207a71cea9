#pragma once

#include "elm/bayer.hpp"
#include "elm/ops.hpp"
#include "elm/rng.hpp"
#include "elm/tensor.hpp"

namespace elm {

// Bi-directional fusion projection. Two routes from a [1,H,W] mosaic, each
// gating the other's source:
//   spatial: strided 3x3 over the mosaic, gated by a 1x1+sigmoid of the
//            packed-plane features;
//   color:   3x3 over the packed planes, gated by a 1x1+sigmoid of the
//            strided features.
// Output is [C, H/2, W/2]: spatial half first, color half second.
struct BfpWeights {
  int channels = 0;  // C, even
  Tensor pack_k, pack_b;        // [C/2,4,3,3] on packed planes
  Tensor ds_k, ds_b;            // [C/2,1,3,3] stride 2 on the mosaic
  Tensor gate_spatial_k, gate_spatial_b;  // 1x1 from pack features
  Tensor gate_color_k, gate_color_b;      // 1x1 from strided features
};

BfpWeights make_bfp_weights(int channels, Rng& rng);

Tensor bfp_forward(const Tensor& mosaic, const BfpWeights& w);  // [1,H,W] -> [C,H/2,W/2]
Tensor bfp_forward(const RawImage& raw, const BfpWeights& w);

}  // namespace elm
