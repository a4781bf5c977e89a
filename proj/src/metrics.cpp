#include "acdmar/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "acdmar/error.hpp"

namespace acdmar {
namespace {

void require_same(const Plane& a, const Plane& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("metric: shape mismatch");
}

std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(window);
  const int r = window / 2;
  double sum = 0;
  for (int i = 0; i < window; ++i) {
    taps[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable weighted sum over every fully-inside window; output is
// (H - w + 1) x (W - w + 1), indexed by the window's top-left corner.
Plane valid_filter(const Plane& img, const std::vector<double>& taps) {
  const int w = static_cast<int>(taps.size());
  const Eigen::Index H = img.rows(), W = img.cols();
  Plane tmp = Plane::Zero(H, W - w + 1);
  for (Eigen::Index y = 0; y < H; ++y) {
    for (Eigen::Index x = 0; x + w <= W; ++x) {
      double s = 0;
      for (int k = 0; k < w; ++k) s += taps[k] * img(y, x + k);
      tmp(y, x) = s;
    }
  }
  Plane out = Plane::Zero(H - w + 1, W - w + 1);
  for (Eigen::Index y = 0; y + w <= H; ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      double s = 0;
      for (int k = 0; k < w; ++k) s += taps[k] * tmp(y + k, x);
      out(y, x) = s;
    }
  }
  return out;
}

}  // namespace

double masked_psnr(const Plane& x, const Plane& ref, const Plane& I, double peak) {
  require_same(x, ref);
  require_same(x, I);
  const double n = (I > 0.5).cast<double>().sum();
  if (n == 0) throw Error("masked_psnr: mask selects no pixels");
  const double mse = ((x - ref).square() * (I > 0.5).cast<double>()).sum() / n;
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double psnr(const Plane& x, const Plane& ref, double peak) {
  return masked_psnr(x, ref, Plane::Ones(x.rows(), x.cols()), peak);
}

double masked_ssim(const Plane& x, const Plane& ref, const Plane& I, const SsimParams& p) {
  require_same(x, ref);
  require_same(x, I);
  if (x.rows() < p.window || x.cols() < p.window) return std::numeric_limits<double>::quiet_NaN();
  const auto taps = gaussian_taps(p.window, p.sigma);
  const Plane mx = valid_filter(x, taps);
  const Plane my = valid_filter(ref, taps);
  const Plane sxx = valid_filter(x * x, taps) - mx * mx;
  const Plane syy = valid_filter(ref * ref, taps) - my * my;
  const Plane sxy = valid_filter(x * ref, taps) - mx * my;
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2);
  const double c2 = std::pow(p.k2 * p.dynamic_range, 2);
  const Plane ssim_map = ((2 * mx * my + c1) * (2 * sxy + c2)) /
                         ((mx * mx + my * my + c1) * (sxx + syy + c2));

  // Summed-area table of metal pixels to find windows touching metal.
  const Eigen::Index H = I.rows(), W = I.cols();
  Eigen::ArrayXXd sat = Eigen::ArrayXXd::Zero(H + 1, W + 1);
  for (Eigen::Index y = 0; y < H; ++y) {
    for (Eigen::Index x2 = 0; x2 < W; ++x2) {
      sat(y + 1, x2 + 1) = (I(y, x2) > 0.5 ? 0.0 : 1.0) + sat(y, x2 + 1) + sat(y + 1, x2) - sat(y, x2);
    }
  }
  double sum = 0;
  long count = 0;
  const int w = p.window;
  for (Eigen::Index y = 0; y < ssim_map.rows(); ++y) {
    for (Eigen::Index x2 = 0; x2 < ssim_map.cols(); ++x2) {
      const double metal = sat(y + w, x2 + w) - sat(y, x2 + w) - sat(y + w, x2) + sat(y, x2);
      if (metal > 0.5) continue;
      sum += ssim_map(y, x2);
      ++count;
    }
  }
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / static_cast<double>(count);
}

MetricReport evaluate(const Plane& x, const Plane& ref, const Plane& I, double peak,
                      const SsimParams& params) {
  MetricReport r;
  r.psnr_db = masked_psnr(x, ref, I, peak);
  r.psnr_infinite = std::isinf(r.psnr_db);
  r.ssim = masked_ssim(x, ref, I, params);
  r.n_pixels_evaluated = static_cast<long>((I > 0.5).count());
  return r;
}

void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "case_id,method,size_group,psnr,ssim,psnr_full\n" << std::setprecision(10);
  auto db = [&](double v) {
    if (std::isinf(v)) os << "inf";
    else os << v;
  };
  for (const auto& r : rows) {
    os << r.case_id << ',' << r.method << ',' << r.size_group << ',';
    db(r.psnr);
    os << ',' << r.ssim << ',';
    db(r.psnr_full);
    os << '\n';
  }
}

}  // namespace acdmar
