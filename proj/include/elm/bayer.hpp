#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "elm/tensor.hpp"

namespace elm {

// Single-plane RGGB mosaic in linear space. Values are normalized to [0,1]
// ([value - black] / [white - black]); the color class of site (r,c) is
// R at (even,even), G at (even,odd) and (odd,even), B at (odd,odd).
struct RawImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // height*width, row-major

  static RawImage zeros(int h, int w);
  static RawImage from_sensor(int h, int w, const std::vector<double>& counts, double black,
                              double white);

  double& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
};

// Half-resolution color planes in order R, G1 (even-row green), G2 (odd-row
// green), B. height()/width() give the full-resolution extents.
struct PackedRaw {
  Tensor channels;  // [4, H/2, W/2]
  int height() const { return channels.dim(1) * 2; }
  int width() const { return channels.dim(2) * 2; }
};

struct SrgbImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // [3,H,W], gamma-encoded, in [0,1]
};

PackedRaw pack(const RawImage& raw);
RawImage unpack(const PackedRaw& packed);

// Degradations operate in linear space before clamping to [0,1]; pass
// clamp=false to observe the raw noisy field (used for statistical checks).
RawImage add_awgn(const RawImage& raw, double sigma, uint64_t seed, bool clamp = true);
RawImage add_uniform(const RawImage& raw, double amplitude, uint64_t seed, bool clamp = true);
RawImage add_shot_read(const RawImage& raw, double shot, double read, uint64_t seed,
                       bool clamp = true);

struct IspParams {
  double r_gain = 1.0;
  double b_gain = 1.0;
  double gamma = 2.2;
};

// White balance, bilinear demosaic, clamp, then gamma encode (v^(1/gamma)).
SrgbImage simple_isp(const RawImage& raw, const IspParams& params);

// Dihedral-group transforms applied to packed data so the output is again a
// valid RGGB mosaic. Index order: 0 identity, 1 rot90 (clockwise), 2 rot180,
// 3 rot270, 4 hflip, 5 vflip, 6 transpose, 7 anti-transpose.
inline constexpr int kNumAugmentTransforms = 8;
PackedRaw augment(const PackedRaw& packed, int transform);

// Identically placed crops with even row/column origins so the CFA phase is
// preserved. size must be even and fit both images.
std::pair<RawImage, RawImage> random_crop_pair(const RawImage& a, const RawImage& b, int size,
                                               uint64_t seed);

// Container for raw frames: magic "ELMR", little-endian u32 version=1,
// u32 height, u32 width, u8 cfa=0 (RGGB), u8 dtype=0 (f32), 2 reserved
// bytes, then height*width f32 samples row-major.
RawImage read_raw(const std::string& path);
void write_raw(const std::string& path, const RawImage& raw);

void write_ppm(const std::string& path, const SrgbImage& img);

}  // namespace elm
