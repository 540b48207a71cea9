#pragma once

#include <string>
#include <vector>

#include "elm/bayer.hpp"

namespace elm {

// 10*log10(peak^2 / MSE), capped at 100 dB (also the value for MSE == 0).
double psnr(const std::vector<double>& a, const std::vector<double>& b, double peak = 1.0);
double psnr(const RawImage& a, const RawImage& b, double peak = 1.0);
double psnr(const SrgbImage& a, const SrgbImage& b, double peak = 1.0);

// Mean SSIM over all full 11x11 neighborhoods (Gaussian weights sigma=1.5,
// K1=0.01, K2=0.03, dynamic range 1). Extents must be at least 11.
double ssim_plane(const double* a, const double* b, int h, int w);
double ssim(const RawImage& a, const RawImage& b);
double ssim(const SrgbImage& a, const SrgbImage& b);  // mean over channels

// Restoration metrics in both spaces: r/r compares mosaics directly, r/s
// compares both after the simple ISP render.
struct MetricReport {
  double psnr_rr = 0.0;
  double psnr_rs = 0.0;
  double ssim_rr = 0.0;
  double ssim_rs = 0.0;
};

MetricReport eval_pair(const RawImage& restored, const RawImage& reference, const IspParams& isp);

std::string metric_report_markdown(const MetricReport& r);
std::string metric_report_csv(const MetricReport& r);

}  // namespace elm
