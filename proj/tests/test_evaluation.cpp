// PSNR is checked against closed forms; SSIM against an independent
// sliding-window implementation that accumulates raw weighted moments
// instead of centered ones.
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "elm/bayer.hpp"
#include "elm/evaluation.hpp"
#include "elm/rng.hpp"
#include "helpers.hpp"

using elm::RawImage;
using elm::Rng;
using elm::SrgbImage;

namespace {

RawImage random_raw(int h, int w, uint64_t seed, double lo = 0.0, double hi = 1.0) {
  RawImage img = RawImage::zeros(h, w);
  Rng rng(seed);
  for (double& v : img.data) v = rng.uniform(lo, hi);
  return img;
}

// Direct SSIM oracle: raw moments Sa, Sb, Saa, Sbb, Sab per window, variance
// as Saa - Sa^2. Same Gaussian definition, different accumulation algebra.
double ssim_oracle(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  const int win = 11;
  const double sigma = 1.5;
  std::vector<double> kern(win * win);
  double ksum = 0.0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const double dy = y - win / 2, dx = x - win / 2;
      kern[y * win + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      ksum += kern[y * win + x];
    }
  for (double& v : kern) v /= ksum;

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + win <= h; ++y)
    for (int x = 0; x + win <= w; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < win; ++dy)
        for (int dx = 0; dx < win; ++dx) {
          const double kv = kern[dy * win + dx];
          const double av = a[static_cast<size_t>(y + dy) * w + (x + dx)];
          const double bv = b[static_cast<size_t>(y + dy) * w + (x + dx)];
          sa += kv * av;
          sb += kv * bv;
          saa += kv * av * av;
          sbb += kv * bv * bv;
          sab += kv * av * bv;
        }
      const double va = saa - sa * sa;
      const double vb = sbb - sb * sb;
      const double cov = sab - sa * sb;
      total += ((2.0 * sa * sb + c1) * (2.0 * cov + c2)) /
               ((sa * sa + sb * sb + c1) * (va + vb + c2));
      ++count;
    }
  return total / count;
}

}  // namespace

TEST_CASE("psnr matches closed forms and caps at 100 dB") {
  const std::vector<double> base(64, 0.5);
  std::vector<double> shifted(64, 0.6);
  // MSE 0.01 against peak 1 is exactly 20 dB.
  CHECK(elm::psnr(shifted, base) == doctest::Approx(20.0).epsilon(1e-12));
  std::vector<double> near(64, 0.51);
  CHECK(elm::psnr(near, base) == doctest::Approx(40.0).epsilon(1e-12));

  CHECK(elm::psnr(base, base) == 100.0);
  std::vector<double> tiny = base;
  tiny[3] += 1e-6;  // MSE ~ 1.6e-14 would exceed 100 dB; the cap holds it
  CHECK(elm::psnr(tiny, base) == 100.0);

  CHECK(elm::psnr(shifted, base) == elm::psnr(base, shifted));

  // Doubling the peak adds 20*log10(2) dB.
  CHECK(elm::psnr(shifted, base, 2.0) ==
        doctest::Approx(20.0 + 20.0 * std::log10(2.0)).epsilon(1e-12));

  std::vector<double> short_v(32, 0.5);
  CHECK_THROWS_AS(elm::psnr(base, short_v), std::invalid_argument);
  const std::vector<double> empty;
  CHECK_THROWS_AS(elm::psnr(empty, empty), std::invalid_argument);
  CHECK_THROWS_AS(elm::psnr(base, base, 0.0), std::invalid_argument);

  const RawImage a = random_raw(8, 8, 1);
  const RawImage b = random_raw(8, 10, 2);
  CHECK_THROWS_AS(elm::psnr(a, b), std::invalid_argument);
  const RawImage a2 = random_raw(8, 8, 3);
  CHECK(elm::psnr(a, a2) == elm::psnr(a.data, a2.data));
}

TEST_CASE("ssim is one on identical images and matches the moment oracle") {
  const RawImage img = random_raw(16, 20, 7);
  CHECK(elm::ssim(img, img) == doctest::Approx(1.0).epsilon(1e-13));

  const RawImage noisy = [&] {
    RawImage n = img;
    Rng rng(8);
    for (double& v : n.data) v += rng.normal() * 0.05;
    return n;
  }();
  const double got = elm::ssim(img, noisy);
  const double want = ssim_oracle(img.data, noisy.data, 16, 20);
  CHECK(got == doctest::Approx(want).epsilon(1e-8));
  CHECK(got < 1.0);
  CHECK(got > 0.0);

  // Structure-free planes reduce SSIM to the luminance term.
  RawImage flat_a = RawImage::zeros(16, 16);
  RawImage flat_b = RawImage::zeros(16, 16);
  for (double& v : flat_a.data) v = 0.25;
  for (double& v : flat_b.data) v = 0.75;
  const double c1 = 1e-4;
  const double lum = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  CHECK(elm::ssim(flat_a, flat_b) == doctest::Approx(lum).epsilon(1e-12));

  CHECK(elm::ssim(img, noisy) == doctest::Approx(elm::ssim(noisy, img)).epsilon(1e-15));

  const RawImage small = random_raw(10, 12, 9);
  CHECK_THROWS_AS(elm::ssim(small, small), std::invalid_argument);
  const RawImage other = random_raw(16, 22, 10);
  CHECK_THROWS_AS(elm::ssim(img, other), std::invalid_argument);
}

TEST_CASE("color ssim averages the three channel planes") {
  const int h = 12, w = 14;
  const size_t plane = static_cast<size_t>(h) * w;
  SrgbImage a, b;
  a.height = b.height = h;
  a.width = b.width = w;
  a.data.resize(3 * plane);
  b.data.resize(3 * plane);
  Rng rng(11);
  for (size_t i = 0; i < plane; ++i) {
    const double v = rng.uniform01();
    a.data[i] = v;  // channel 0 identical in both
    b.data[i] = v;
  }
  for (size_t i = plane; i < 3 * plane; ++i) a.data[i] = rng.uniform01();
  for (size_t i = plane; i < 3 * plane; ++i) b.data[i] = rng.uniform01();

  const double s1 = elm::ssim_plane(a.data.data() + plane, b.data.data() + plane, h, w);
  const double s2 = elm::ssim_plane(a.data.data() + 2 * plane, b.data.data() + 2 * plane, h, w);
  CHECK(elm::ssim(a, b) == doctest::Approx((1.0 + s1 + s2) / 3.0).epsilon(1e-12));
}

TEST_CASE("eval_pair composes the plain metrics in both spaces") {
  const RawImage reference = random_raw(24, 24, 20, 0.1, 0.9);
  RawImage restored = reference;
  Rng rng(21);
  for (double& v : restored.data) v += rng.normal() * 0.02;

  elm::IspParams isp;
  isp.r_gain = 1.5;
  isp.b_gain = 0.8;
  isp.gamma = 2.2;

  const elm::MetricReport m = elm::eval_pair(restored, reference, isp);
  CHECK(m.psnr_rr == elm::psnr(restored, reference));
  CHECK(m.ssim_rr == elm::ssim(restored, reference));
  const SrgbImage rendered = elm::simple_isp(restored, isp);
  const SrgbImage target = elm::simple_isp(reference, isp);
  CHECK(m.psnr_rs == elm::psnr(rendered, target));
  CHECK(m.ssim_rs == elm::ssim(rendered, target));

  // Rendering changes the numbers, so the two spaces must not alias.
  CHECK(m.psnr_rr != m.psnr_rs);
}

TEST_CASE("metric reports print all four numbers in both formats") {
  elm::MetricReport r;
  r.psnr_rr = 12.3456789;
  r.psnr_rs = 23.4567891;
  r.ssim_rr = 0.87654321;
  r.ssim_rs = 0.76543219;

  const std::string md = elm::metric_report_markdown(r);
  CHECK(md.find("| space | PSNR (dB) | SSIM |") != std::string::npos);
  CHECK(md.find("| r/r   | 12.3457 | 0.876543 |") != std::string::npos);
  CHECK(md.find("| r/s   | 23.4568 | 0.765432 |") != std::string::npos);

  const std::string csv = elm::metric_report_csv(r);
  CHECK(csv.find("space,psnr_db,ssim") == 0);
  CHECK(csv.find("rr,12.3456789,0.87654321") != std::string::npos);
  CHECK(csv.find("rs,23.4567891,0.76543219") != std::string::npos);
}
