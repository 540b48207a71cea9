#include "elm/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace elm {

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

const double* ssim_kernel() {
  static double k[kSsimWindow * kSsimWindow];
  static bool ready = false;
  if (!ready) {
    double sum = 0.0;
    const int c = kSsimWindow / 2;
    for (int y = 0; y < kSsimWindow; ++y) {
      for (int x = 0; x < kSsimWindow; ++x) {
        const double dy = y - c, dx = x - c;
        const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * kSsimSigma * kSsimSigma));
        k[y * kSsimWindow + x] = v;
        sum += v;
      }
    }
    for (double& v : k) v /= sum;
    ready = true;
  }
  return k;
}

}  // namespace

double psnr(const std::vector<double>& a, const std::vector<double>& b, double peak) {
  require(a.size() == b.size() && !a.empty(),
          "psnr: size mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  require(peak > 0.0, "psnr: peak must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse == 0.0) return 100.0;
  const double db = 10.0 * std::log10(peak * peak / mse);
  return std::min(db, 100.0);
}

double psnr(const RawImage& a, const RawImage& b, double peak) {
  require(a.height == b.height && a.width == b.width,
          "psnr: image extents differ (" + std::to_string(a.height) + "x" + std::to_string(a.width) +
              " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  return psnr(a.data, b.data, peak);
}

double psnr(const SrgbImage& a, const SrgbImage& b, double peak) {
  require(a.height == b.height && a.width == b.width,
          "psnr: image extents differ");
  return psnr(a.data, b.data, peak);
}

double ssim_plane(const double* a, const double* b, int h, int w) {
  require(h >= kSsimWindow && w >= kSsimWindow,
          "ssim: extents " + std::to_string(h) + "x" + std::to_string(w) + " must be at least " +
              std::to_string(kSsimWindow));
  const double* kern = ssim_kernel();
  const double c1 = kSsimK1 * kSsimK1;  // (K1*L)^2 with L = 1
  const double c2 = kSsimK2 * kSsimK2;
  double total = 0.0;
  int64_t count = 0;
  for (int y = 0; y + kSsimWindow <= h; ++y) {
    for (int x = 0; x + kSsimWindow <= w; ++x) {
      double ma = 0.0, mb = 0.0;
      for (int dy = 0; dy < kSsimWindow; ++dy) {
        const double* ra = a + static_cast<size_t>(y + dy) * w + x;
        const double* rb = b + static_cast<size_t>(y + dy) * w + x;
        const double* kr = kern + dy * kSsimWindow;
        for (int dx = 0; dx < kSsimWindow; ++dx) {
          ma += kr[dx] * ra[dx];
          mb += kr[dx] * rb[dx];
        }
      }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int dy = 0; dy < kSsimWindow; ++dy) {
        const double* ra = a + static_cast<size_t>(y + dy) * w + x;
        const double* rb = b + static_cast<size_t>(y + dy) * w + x;
        const double* kr = kern + dy * kSsimWindow;
        for (int dx = 0; dx < kSsimWindow; ++dx) {
          const double da = ra[dx] - ma;
          const double db = rb[dx] - mb;
          va += kr[dx] * da * da;
          vb += kr[dx] * db * db;
          cov += kr[dx] * da * db;
        }
      }
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double ssim(const RawImage& a, const RawImage& b) {
  require(a.height == b.height && a.width == b.width, "ssim: image extents differ");
  return ssim_plane(a.data.data(), b.data.data(), a.height, a.width);
}

double ssim(const SrgbImage& a, const SrgbImage& b) {
  require(a.height == b.height && a.width == b.width, "ssim: image extents differ");
  const size_t plane = static_cast<size_t>(a.height) * a.width;
  double acc = 0.0;
  for (int ch = 0; ch < 3; ++ch)
    acc += ssim_plane(a.data.data() + ch * plane, b.data.data() + ch * plane, a.height, a.width);
  return acc / 3.0;
}

MetricReport eval_pair(const RawImage& restored, const RawImage& reference, const IspParams& isp) {
  MetricReport r;
  r.psnr_rr = psnr(restored, reference);
  r.ssim_rr = ssim(restored, reference);
  const SrgbImage rendered = simple_isp(restored, isp);
  const SrgbImage target = simple_isp(reference, isp);
  r.psnr_rs = psnr(rendered, target);
  r.ssim_rs = ssim(rendered, target);
  return r;
}

std::string metric_report_markdown(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "| space | PSNR (dB) | SSIM |\n"
                "|-------|-----------|------|\n"
                "| r/r   | %.4f | %.6f |\n"
                "| r/s   | %.4f | %.6f |\n",
                r.psnr_rr, r.ssim_rr, r.psnr_rs, r.ssim_rs);
  return buf;
}

std::string metric_report_csv(const MetricReport& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "space,psnr_db,ssim\nrr,%.10g,%.10g\nrs,%.10g,%.10g\n",
                r.psnr_rr, r.ssim_rr, r.psnr_rs, r.ssim_rs);
  return buf;
}

}  // namespace elm
