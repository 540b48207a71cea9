#pragma once

#include <vector>

#include "elm/tensor.hpp"

namespace elm {

// ----- elementwise and linear algebra ---------------------------------------

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// a: [..., C], v: [C]; adds v to every trailing row
Tensor add_rowvec(const Tensor& a, const Tensor& v);

// a: [N, rest...], b: [rest...]; adds b to every slice along axis 0
Tensor add_bcast0(const Tensor& a, const Tensor& b);

// Batched matmul over shared leading dims: a [..., m, k] with b [..., k, n],
// or b [..., n, k] when transpose_b is set. Result [..., m, n].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor softmax_lastdim(const Tensor& t);

// t: [..., C]; per-row normalization over the trailing axis.
Tensor layer_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, double eps);

Tensor sigmoid(const Tensor& t);
Tensor gelu(const Tensor& t);  // exact erf form

Tensor mean_all(const Tensor& t);  // -> [1]

// ----- structure -------------------------------------------------------------

Tensor reshape(const Tensor& t, const std::vector<int>& shape);  // shares data
Tensor permute(const Tensor& t, const std::vector<int>& axes);
Tensor concat_dim0(const Tensor& a, const Tensor& b);  // equal trailing dims

// ----- convolution -----------------------------------------------------------

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  bool depthwise = false;
};

int conv_out_extent(int in, int kernel, int stride, int padding);

// input [Cin,H,W], kernels [Cout,Cin,kh,kw] ([C,1,kh,kw] depthwise), bias [Cout]
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& kernels,
              const Tensor& bias);

// input [Cin,H,W], kernels [Cin,Cout,kh,kw]; output extent (H-1)*s - 2p + kh
Tensor transposed_conv2d(const Tensor& input, const ConvSpec& spec,
                         const Tensor& kernels, const Tensor& bias);

// ----- windowing (token layout: windows are [N, M*M, C], tokens row-major) ---

Tensor window_partition(const Tensor& t, int M);  // [C,H,W] -> [N,M*M,C]
Tensor window_reverse(const Tensor& w, int H, int W, int M);  // inverse

Tensor window_partition_tokens(const Tensor& t, int h, int w, int M);  // [T,C] -> [N,M*M,C]
Tensor window_reverse_tokens(const Tensor& win, int h, int w, int M);  // inverse

// [N,M*M,C] -> [N,M*M/4,4,C]; groups are the 2x2 sub-tiles of each window
Tensor subwindow_rearrange(const Tensor& w);
Tensor subwindow_restore(const Tensor& g, int M);  // inverse

Tensor chw_to_tokens(const Tensor& t);                      // [C,H,W] -> [H*W,C]
Tensor tokens_to_chw(const Tensor& t, int C, int H, int W); // inverse

// RGGB planes from a full-resolution mosaic: [1,H,W] -> [4,H/2,W/2] with
// plane order R(0,0), G1(0,1), G2(1,0), B(1,1). Differentiable.
Tensor pack_plane_op(const Tensor& t);

}  // namespace elm
