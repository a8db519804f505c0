#pragma once

#include <string>
#include <vector>

#include "image.hpp"

namespace lfd {

// 10 log10(1 / mse) over [0,1] images; +infinity when mse == 0.
double psnr(const Image& a, const Image& b);

// Mean local SSIM, Gaussian window 11 / sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
// per channel then averaged. Images must be at least the window size.
double ssim(const Image& a, const Image& b);

struct ViewMetric {
  int view = 0;
  double psnr = 0;    // meaningful only when !psnr_inf
  bool psnr_inf = false;
  double ssim = 0;
};

struct MetricReport {
  std::vector<ViewMetric> views;
  double mean_psnr = 0, std_psnr = 0;  // over finite-psnr views
  bool psnr_all_inf = false;
  double mean_ssim = 0, std_ssim = 0;

  std::string to_json() const;
};

MetricReport report_from_pairs(const std::vector<ViewMetric>& views);

// Pairs view_NN.ppm files by index between the two directories.
MetricReport evaluate_views(const std::string& generated_dir, const std::string& reference_dir);

}  // namespace lfd
