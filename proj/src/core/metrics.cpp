#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <limits>
#include <map>

namespace lfd {

namespace fs = std::filesystem;

double psnr(const Image& a, const Image& b) {
  LFD_CHECK(a.h == b.h && a.w == b.w, "psnr: image size mismatch");
  double se = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.rgb.size());
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  const int half = kWin / 2;
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - half;
    k[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-region separable Gaussian filter of an (h, w) plane.
std::vector<double> gauss_valid(const std::vector<double>& plane, int h, int w, int& oh, int& ow) {
  static const std::vector<double> kernel = gaussian_kernel();
  ow = w - kWin + 1;
  oh = h - kWin + 1;
  std::vector<double> rows(static_cast<size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWin; ++i) s += kernel[static_cast<size_t>(i)] * plane[static_cast<size_t>(y) * w + x + i];
      rows[static_cast<size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWin; ++i) s += kernel[static_cast<size_t>(i)] * rows[static_cast<size_t>(y + i) * ow + x];
      out[static_cast<size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  LFD_CHECK(a.h == b.h && a.w == b.w, "ssim: image size mismatch");
  LFD_CHECK(a.h >= kWin && a.w >= kWin, "ssim: image smaller than the 11x11 window");
  const size_t n = static_cast<size_t>(a.h) * a.w;
  std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < n; ++i) {
      const double va = a.rgb[3 * i + static_cast<size_t>(c)];
      const double vb = b.rgb[3 * i + static_cast<size_t>(c)];
      pa[i] = va;
      pb[i] = vb;
      paa[i] = va * va;
      pbb[i] = vb * vb;
      pab[i] = va * vb;
    }
    int oh = 0, ow = 0;
    const std::vector<double> mu_a = gauss_valid(pa, a.h, a.w, oh, ow);
    const std::vector<double> mu_b = gauss_valid(pb, a.h, a.w, oh, ow);
    const std::vector<double> e_aa = gauss_valid(paa, a.h, a.w, oh, ow);
    const std::vector<double> e_bb = gauss_valid(pbb, a.h, a.w, oh, ow);
    const std::vector<double> e_ab = gauss_valid(pab, a.h, a.w, oh, ow);
    double sum = 0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (va + vb + kC2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / 3.0;
}

MetricReport report_from_pairs(const std::vector<ViewMetric>& views) {
  MetricReport rep;
  rep.views = views;
  double sp = 0, spp = 0, ss = 0, sss = 0;
  int finite = 0;
  for (const ViewMetric& v : views) {
    if (!v.psnr_inf) {
      sp += v.psnr;
      spp += v.psnr * v.psnr;
      ++finite;
    }
    ss += v.ssim;
    sss += v.ssim * v.ssim;
  }
  if (finite > 0) {
    rep.mean_psnr = sp / finite;
    rep.std_psnr = std::sqrt(std::max(0.0, spp / finite - rep.mean_psnr * rep.mean_psnr));
  } else {
    rep.psnr_all_inf = true;
  }
  const double nv = static_cast<double>(views.size());
  rep.mean_ssim = ss / nv;
  rep.std_ssim = std::sqrt(std::max(0.0, sss / nv - rep.mean_ssim * rep.mean_ssim));
  return rep;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["views"] = nlohmann::json::array();
  for (const ViewMetric& v : views) {
    nlohmann::json e;
    e["view"] = v.view;
    e["psnr"] = v.psnr_inf ? nlohmann::json(nullptr) : nlohmann::json(v.psnr);
    e["psnr_inf"] = v.psnr_inf;
    e["ssim"] = v.ssim;
    j["views"].push_back(e);
  }
  j["mean_psnr"] = psnr_all_inf ? nlohmann::json(nullptr) : nlohmann::json(mean_psnr);
  j["std_psnr"] = psnr_all_inf ? nlohmann::json(nullptr) : nlohmann::json(std_psnr);
  j["mean_ssim"] = mean_ssim;
  j["std_ssim"] = std_ssim;
  return j.dump(2);
}

namespace {

std::map<int, std::string> index_views(const std::string& dir) {
  std::map<int, std::string> views;
  if (!fs::is_directory(dir)) fail(ErrorCode::io, dir + " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string fname = entry.path().filename().string();
    if (fname.rfind("view_", 0) != 0 || entry.path().extension() != ".ppm") continue;
    const std::string idx = fname.substr(5, fname.size() - 5 - 4);
    try {
      views[std::stoi(idx)] = entry.path().string();
    } catch (const std::exception&) {
      fail(ErrorCode::parse, "unparseable view index in " + fname);
    }
  }
  return views;
}

}  // namespace

MetricReport evaluate_views(const std::string& generated_dir, const std::string& reference_dir) {
  const auto gen = index_views(generated_dir);
  const auto ref = index_views(reference_dir);
  LFD_CHECK(!gen.empty(), "no view_NN.ppm files in " + generated_dir);

  std::string missing;
  for (const auto& [idx, path] : gen)
    if (ref.find(idx) == ref.end()) missing += " " + std::to_string(idx);
  for (const auto& [idx, path] : ref)
    if (gen.find(idx) == gen.end()) missing += " " + std::to_string(idx);
  if (!missing.empty()) fail(ErrorCode::invalid_argument, "unpaired view indices:" + missing);

  std::vector<ViewMetric> views;
  for (const auto& [idx, path] : gen) {
    const Image a = read_ppm(path);
    const Image b = read_ppm(ref.at(idx));
    ViewMetric m;
    m.view = idx;
    const double p = psnr(a, b);
    m.psnr_inf = std::isinf(p);
    m.psnr = m.psnr_inf ? 0.0 : p;
    m.ssim = ssim(a, b);
    views.push_back(m);
  }
  return report_from_pairs(views);
}

}  // namespace lfd
