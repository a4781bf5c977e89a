#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "acdmar/tensor_ops.hpp"

namespace acdmar {

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

struct MetricReport {
  double psnr_db = 0.0;
  bool psnr_infinite = false;
  double ssim = 0.0;
  long n_pixels_evaluated = 0;
};

// 10 log10(peak^2 / MSE) over pixels with I = 1. Identical inputs give +inf.
// Throws Error when the mask selects no pixels.
double masked_psnr(const Plane& x, const Plane& ref, const Plane& I, double peak = 1.0);

// Unmasked variant, reported alongside the masked one.
double psnr(const Plane& x, const Plane& ref, double peak = 1.0);

// Gaussian-window SSIM averaged over the windows lying fully inside the image
// and fully on I = 1 pixels. Returns NaN when no such window exists.
double masked_ssim(const Plane& x, const Plane& ref, const Plane& I, const SsimParams& params = {});

MetricReport evaluate(const Plane& x, const Plane& ref, const Plane& I, double peak = 1.0,
                      const SsimParams& params = {});

struct MetricRow {
  std::string case_id;
  std::string method;
  std::string size_group;
  double psnr = 0.0;
  double ssim = 0.0;
  double psnr_full = 0.0;  // unmasked
};

// Columns: case_id,method,size_group,psnr,ssim,psnr_full. Infinite PSNR is
// written "inf".
void write_metric_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);

}  // namespace acdmar
