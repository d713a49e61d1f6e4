#pragma once

#include <functional>
#include <optional>

#include "omni/common.hpp"

namespace omni {

// Images are row-major [H,W,C] in [0,1]; depth maps are [H,W].

// 10*log10(1/MSE); identical inputs return +infinity (callers exclude the
// sentinel from averages).
double psnr(const std::vector<double>& a, const std::vector<double>& b);

// Standard single-scale SSIM: 11x11 Gaussian window sigma=1.5, K1=0.01,
// K2=0.03, dynamic range 1.0, valid padding, mean over channels/positions.
double ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w, int c);

// Pearson correlation over valid pixels (mask nullptr = all valid).
// Returns NaN when fewer than 2 valid pixels or either side has zero variance.
double pcc(const std::vector<double>& a, const std::vector<double>& b,
           const std::vector<uint8_t>* valid = nullptr);

// Perceptual-distance hook; no pretrained network ships with this artifact,
// so the default is absent and losses treat it as zero.
using LpipsFn =
    std::function<double(const std::vector<double>&, const std::vector<double>&, int, int, int)>;
LpipsFn& lpips_hook();  // unset by default

struct MetricReport {
  double psnr = 0;  // mean over views with finite PSNR
  double ssim = 0;
  double pcc = 0;
  int64_t psnr_inf_count = 0;  // views excluded from the PSNR mean
  std::optional<double> lpips;
  std::vector<double> per_view_psnr, per_view_ssim, per_view_pcc;
};

}  // namespace omni
