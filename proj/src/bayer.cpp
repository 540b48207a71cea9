#include "elm/bayer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "elm/rng.hpp"

namespace elm {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_even(const RawImage& raw, const char* op) {
  require(raw.height > 0 && raw.width > 0 && raw.height % 2 == 0 && raw.width % 2 == 0,
          std::string(op) + ": extents " + std::to_string(raw.height) + "x" +
              std::to_string(raw.width) + " must be positive and even");
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

}  // namespace

RawImage RawImage::zeros(int h, int w) {
  require(h > 0 && w > 0, "raw image: extents must be positive");
  RawImage img;
  img.height = h;
  img.width = w;
  img.data.assign(static_cast<size_t>(h) * w, 0.0);
  return img;
}

RawImage RawImage::from_sensor(int h, int w, const std::vector<double>& counts, double black,
                               double white) {
  require(white > black, "raw image: white level must exceed black level");
  require(counts.size() == static_cast<size_t>(h) * static_cast<size_t>(w),
          "raw image: sample count does not match extents");
  RawImage img = zeros(h, w);
  const double inv = 1.0 / (white - black);
  for (size_t i = 0; i < counts.size(); ++i) img.data[i] = clamp01((counts[i] - black) * inv);
  return img;
}

PackedRaw pack(const RawImage& raw) {
  require_even(raw, "pack");
  const int h2 = raw.height / 2, w2 = raw.width / 2;
  PackedRaw out;
  out.channels = Tensor::zeros({4, h2, w2});
  double* p = out.channels.ptr();
  for (int pidx = 0; pidx < 4; ++pidx) {
    const int py = pidx >> 1, px = pidx & 1;
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < w2; ++j)
        p[(static_cast<size_t>(pidx) * h2 + i) * w2 + j] = raw.at(2 * i + py, 2 * j + px);
  }
  return out;
}

RawImage unpack(const PackedRaw& packed) {
  require(packed.channels.ndim() == 3 && packed.channels.dim(0) == 4,
          "unpack: expected [4,h,w] planes, got " + shape_str(packed.channels.shape));
  const int h2 = packed.channels.dim(1), w2 = packed.channels.dim(2);
  RawImage out = RawImage::zeros(h2 * 2, w2 * 2);
  const double* p = packed.channels.ptr();
  for (int pidx = 0; pidx < 4; ++pidx) {
    const int py = pidx >> 1, px = pidx & 1;
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < w2; ++j)
        out.at(2 * i + py, 2 * j + px) = p[(static_cast<size_t>(pidx) * h2 + i) * w2 + j];
  }
  return out;
}

RawImage add_awgn(const RawImage& raw, double sigma, uint64_t seed, bool clamp) {
  require(sigma >= 0.0, "awgn: sigma must be non-negative");
  RawImage out = raw;
  Rng rng(seed);
  for (double& v : out.data) {
    v += sigma * rng.normal();
    if (clamp) v = clamp01(v);
  }
  return out;
}

RawImage add_uniform(const RawImage& raw, double amplitude, uint64_t seed, bool clamp) {
  require(amplitude >= 0.0, "uniform noise: amplitude must be non-negative");
  RawImage out = raw;
  Rng rng(seed);
  for (double& v : out.data) {
    v += rng.uniform(-amplitude, amplitude);
    if (clamp) v = clamp01(v);
  }
  return out;
}

RawImage add_shot_read(const RawImage& raw, double shot, double read, uint64_t seed, bool clamp) {
  require(shot >= 0.0 && read >= 0.0, "shot-read noise: parameters must be non-negative");
  RawImage out = raw;
  Rng rng(seed);
  for (double& v : out.data) {
    const double var = shot * std::max(v, 0.0) + read * read;
    v += std::sqrt(var) * rng.normal();
    if (clamp) v = clamp01(v);
  }
  return out;
}

SrgbImage simple_isp(const RawImage& raw, const IspParams& params) {
  require_even(raw, "simple_isp");
  require(params.r_gain > 0.0 && params.b_gain > 0.0 && params.gamma > 0.0,
          "simple_isp: gains and gamma must be positive");
  const int H = raw.height, W = raw.width;

  // White balance on mosaic sites.
  std::vector<double> wb(raw.data);
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const bool rsite = (r % 2 == 0) && (c % 2 == 0);
      const bool bsite = (r % 2 == 1) && (c % 2 == 1);
      if (rsite) wb[static_cast<size_t>(r) * W + c] *= params.r_gain;
      if (bsite) wb[static_cast<size_t>(r) * W + c] *= params.b_gain;
    }
  }

  // Borders reflect with a two-pixel step so the sampled site keeps its CFA
  // class; clamping to the edge would mix color planes.
  auto fold = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  auto m = [&](int r, int c) { return wb[static_cast<size_t>(fold(r, H)) * W + fold(c, W)]; };

  SrgbImage img;
  img.height = H;
  img.width = W;
  img.data.assign(static_cast<size_t>(3) * H * W, 0.0);
  const double inv_gamma = 1.0 / params.gamma;
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const int pr = r % 2, pc = c % 2;
      double red, green, blue;
      if (pr == 0 && pc == 0) {  // R site
        red = m(r, c);
        green = 0.25 * (m(r - 1, c) + m(r + 1, c) + m(r, c - 1) + m(r, c + 1));
        blue = 0.25 * (m(r - 1, c - 1) + m(r - 1, c + 1) + m(r + 1, c - 1) + m(r + 1, c + 1));
      } else if (pr == 0 && pc == 1) {  // G site on R row
        red = 0.5 * (m(r, c - 1) + m(r, c + 1));
        green = m(r, c);
        blue = 0.5 * (m(r - 1, c) + m(r + 1, c));
      } else if (pr == 1 && pc == 0) {  // G site on B row
        red = 0.5 * (m(r - 1, c) + m(r + 1, c));
        green = m(r, c);
        blue = 0.5 * (m(r, c - 1) + m(r, c + 1));
      } else {  // B site
        red = 0.25 * (m(r - 1, c - 1) + m(r - 1, c + 1) + m(r + 1, c - 1) + m(r + 1, c + 1));
        green = 0.25 * (m(r - 1, c) + m(r + 1, c) + m(r, c - 1) + m(r, c + 1));
        blue = m(r, c);
      }
      const size_t px = static_cast<size_t>(r) * W + c;
      img.data[px] = std::pow(clamp01(red), inv_gamma);
      img.data[static_cast<size_t>(H) * W + px] = std::pow(clamp01(green), inv_gamma);
      img.data[2 * static_cast<size_t>(H) * W + px] = std::pow(clamp01(blue), inv_gamma);
    }
  }
  return img;
}

namespace {

// Output coordinate (r,c) of the transformed plane maps to input (ir,ic).
// Transforms 1, 3, 6, 7 swap the plane extents.
bool transform_swaps_axes(int t) { return t == 1 || t == 3 || t == 6 || t == 7; }

void dihedral_source(int t, int h, int w, int r, int c, int& ir, int& ic) {
  switch (t) {
    case 0: ir = r; ic = c; break;
    case 1: ir = h - 1 - c; ic = r; break;          // rot90 clockwise
    case 2: ir = h - 1 - r; ic = w - 1 - c; break;  // rot180
    case 3: ir = c; ic = w - 1 - r; break;          // rot270
    case 4: ir = r; ic = w - 1 - c; break;          // hflip
    case 5: ir = h - 1 - r; ic = c; break;          // vflip
    case 6: ir = c; ic = r; break;                  // transpose
    case 7: ir = w - 1 - c; ic = h - 1 - r; break;  // anti-transpose
    default: throw std::invalid_argument("augment: transform index out of range 0..7");
  }
}

}  // namespace

PackedRaw augment(const PackedRaw& packed, int transform) {
  require(transform >= 0 && transform < kNumAugmentTransforms,
          "augment: transform index " + std::to_string(transform) + " out of range 0..7");
  require(packed.channels.ndim() == 3 && packed.channels.dim(0) == 4,
          "augment: expected [4,h,w] planes, got " + shape_str(packed.channels.shape));
  const int h = packed.channels.dim(1), w = packed.channels.dim(2);
  const bool swap = transform_swaps_axes(transform);
  const int oh = swap ? w : h, ow = swap ? h : w;

  PackedRaw out;
  out.channels = Tensor::zeros({4, oh, ow});
  const double* src = packed.channels.ptr();
  double* dst = out.channels.ptr();
  // Axis-swapping transforms exchange the two green phases: a site on an even
  // input row lands on an even output column, and RGGB keeps G1 row-aligned.
  for (int pidx = 0; pidx < 4; ++pidx) {
    int sp = pidx;
    if (swap && (pidx == 1 || pidx == 2)) sp = 3 - pidx;
    const double* splane = src + static_cast<size_t>(sp) * h * w;
    double* dplane = dst + static_cast<size_t>(pidx) * oh * ow;
    for (int r = 0; r < oh; ++r) {
      for (int c = 0; c < ow; ++c) {
        int ir, ic;
        dihedral_source(transform, h, w, r, c, ir, ic);
        dplane[static_cast<size_t>(r) * ow + c] = splane[static_cast<size_t>(ir) * w + ic];
      }
    }
  }
  return out;
}

std::pair<RawImage, RawImage> random_crop_pair(const RawImage& a, const RawImage& b, int size,
                                               uint64_t seed) {
  require(a.height == b.height && a.width == b.width,
          "crop: image extents differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) +
              " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  require(size > 0 && size % 2 == 0, "crop: size must be positive and even");
  require(size <= a.height && size <= a.width,
          "crop: size " + std::to_string(size) + " exceeds extents " + std::to_string(a.height) +
              "x" + std::to_string(a.width));
  Rng rng(seed);
  const int r0 = 2 * rng.uniform_int(0, (a.height - size) / 2);
  const int c0 = 2 * rng.uniform_int(0, (a.width - size) / 2);
  RawImage ca = RawImage::zeros(size, size);
  RawImage cb = RawImage::zeros(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      ca.at(r, c) = a.at(r0 + r, c0 + c);
      cb.at(r, c) = b.at(r0 + r, c0 + c);
    }
  }
  return {std::move(ca), std::move(cb)};
}

namespace {

constexpr char kRawMagic[4] = {'E', 'L', 'M', 'R'};
constexpr uint32_t kRawVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void write_raw(const std::string& path, const RawImage& raw) {
  require(raw.height > 0 && raw.width > 0, "write_raw: empty image");
  std::string buf;
  buf.reserve(20 + raw.data.size() * 4);
  buf.append(kRawMagic, 4);
  put_u32(buf, kRawVersion);
  put_u32(buf, static_cast<uint32_t>(raw.height));
  put_u32(buf, static_cast<uint32_t>(raw.width));
  buf.push_back(0);  // cfa: RGGB
  buf.push_back(0);  // dtype: f32
  buf.push_back(0);
  buf.push_back(0);
  for (double v : raw.data) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(buf, bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_raw: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write_raw: short write to " + path);
}

RawImage read_raw(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_raw: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 20) throw std::runtime_error("read_raw: truncated header in " + path);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (std::memcmp(p, kRawMagic, 4) != 0)
    throw std::runtime_error("read_raw: bad magic in " + path + " (not a raw container)");
  const uint32_t version = get_u32(p + 4);
  if (version != kRawVersion)
    throw std::runtime_error("read_raw: unsupported version " + std::to_string(version) + " in " + path);
  const uint32_t h = get_u32(p + 8);
  const uint32_t w = get_u32(p + 12);
  if (h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
    throw std::runtime_error("read_raw: implausible extents in " + path);
  if (p[16] != 0) throw std::runtime_error("read_raw: unsupported CFA layout in " + path);
  if (p[17] != 0) throw std::runtime_error("read_raw: unsupported sample dtype in " + path);
  const size_t need = 20 + static_cast<size_t>(h) * w * 4;
  if (buf.size() != need)
    throw std::runtime_error("read_raw: payload size mismatch in " + path + " (expected " +
                             std::to_string(need) + " bytes, got " + std::to_string(buf.size()) + ")");
  RawImage img = RawImage::zeros(static_cast<int>(h), static_cast<int>(w));
  for (size_t i = 0; i < img.data.size(); ++i) {
    const uint32_t bits = get_u32(p + 20 + i * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    img.data[i] = static_cast<double>(f);
  }
  return img;
}

void write_ppm(const std::string& path, const SrgbImage& img) {
  require(img.height > 0 && img.width > 0 &&
              img.data.size() == static_cast<size_t>(3) * img.height * img.width,
          "write_ppm: malformed image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  char header[64];
  const int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
  out.write(header, n);
  const size_t plane = static_cast<size_t>(img.height) * img.width;
  std::string body;
  body.reserve(plane * 3);
  for (size_t i = 0; i < plane; ++i) {
    for (int ch = 0; ch < 3; ++ch) {
      const double v = std::min(1.0, std::max(0.0, img.data[ch * plane + i]));
      body.push_back(static_cast<char>(std::lround(v * 255.0)));
    }
  }
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw std::runtime_error("write_ppm: short write to " + path);
}

}  // namespace elm
