#pragma once

// 8-bit PNG visualization: windowed grayscale panels and simple line plots.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "acdmar/tensor_ops.hpp"

namespace acdmar::io {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> px;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 255);
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

// Values are mapped linearly from [lo, hi] to [0, 255] and clipped.
RgbImage window_gray(const Plane& image, double lo = 0.0, double hi = 1.0);

// Side-by-side concatenation with a white gap, top-aligned.
RgbImage hconcat(const std::vector<RgbImage>& images, int gap = 4);

// Line plot of y against its index, autoscaled; log10 y axis when log_y.
RgbImage plot_series(const std::vector<double>& y, int width = 480, int height = 320, bool log_y = false);

void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace acdmar::io
