#include "elm/bfp.hpp"

#include <stdexcept>

namespace elm {

namespace {

Tensor trunc_normal_tensor(const std::vector<int>& shape, Rng& rng, double stddev = 0.02) {
  Tensor t = Tensor::zeros(shape, true);
  for (double& v : t.vec()) v = rng.trunc_normal(stddev);
  return t;
}

Tensor zero_param(const std::vector<int>& shape) { return Tensor::zeros(shape, true); }

}  // namespace

BfpWeights make_bfp_weights(int channels, Rng& rng) {
  if (channels < 2 || channels % 2 != 0)
    throw std::invalid_argument("bfp: channel count " + std::to_string(channels) +
                                " must be even and at least 2");
  const int half = channels / 2;
  BfpWeights w;
  w.channels = channels;
  w.pack_k = trunc_normal_tensor({half, 4, 3, 3}, rng);
  w.pack_b = zero_param({half});
  w.ds_k = trunc_normal_tensor({half, 1, 3, 3}, rng);
  w.ds_b = zero_param({half});
  w.gate_spatial_k = trunc_normal_tensor({half, half, 1, 1}, rng);
  w.gate_spatial_b = zero_param({half});
  w.gate_color_k = trunc_normal_tensor({half, half, 1, 1}, rng);
  w.gate_color_b = zero_param({half});
  return w;
}

Tensor bfp_forward(const Tensor& mosaic, const BfpWeights& w) {
  if (mosaic.ndim() != 3 || mosaic.dim(0) != 1)
    throw std::invalid_argument("bfp: expected [1,H,W] mosaic, got " + shape_str(mosaic.shape));
  const int H = mosaic.dim(1), W = mosaic.dim(2);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("bfp: extents " + std::to_string(H) + "x" + std::to_string(W) +
                                " must be even");
  const int half = w.channels / 2;

  Tensor planes = pack_plane_op(mosaic);  // [4,H/2,W/2]

  ConvSpec pack_spec{4, half, 3, 3, 1, 1, false};
  Tensor color_feat = conv2d(planes, pack_spec, w.pack_k, w.pack_b);

  ConvSpec ds_spec{1, half, 3, 3, 2, 1, false};
  Tensor ds_feat = conv2d(mosaic, ds_spec, w.ds_k, w.ds_b);

  ConvSpec gate_spec{half, half, 1, 1, 1, 0, false};
  Tensor f_spatial = mul(ds_feat, sigmoid(conv2d(color_feat, gate_spec, w.gate_spatial_k, w.gate_spatial_b)));
  Tensor f_color = mul(color_feat, sigmoid(conv2d(ds_feat, gate_spec, w.gate_color_k, w.gate_color_b)));

  return concat_dim0(f_spatial, f_color);
}

Tensor bfp_forward(const RawImage& raw, const BfpWeights& w) {
  Tensor mosaic = Tensor::from({1, raw.height, raw.width}, raw.data);
  return bfp_forward(mosaic, w);
}

}  // namespace elm
