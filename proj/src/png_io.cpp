#include "acdmar/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "acdmar/error.hpp"

namespace acdmar::io {

RgbImage::RgbImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), px(static_cast<std::size_t>(w) * h * 3, fill) {}

void RgbImage::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  auto* p = &px[(static_cast<std::size_t>(y) * width + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

RgbImage window_gray(const Plane& image, double lo, double hi) {
  if (!(hi > lo)) throw Error("window_gray: hi must exceed lo");
  RgbImage out(static_cast<int>(image.cols()), static_cast<int>(image.rows()));
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double v = (image(y, x) - lo) / (hi - lo);
      v = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
      const auto g = static_cast<std::uint8_t>(std::lround(v * 255.0));
      out.set(x, y, g, g, g);
    }
  }
  return out;
}

RgbImage hconcat(const std::vector<RgbImage>& images, int gap) {
  int w = 0, h = 0;
  for (const auto& im : images) {
    w += im.width;
    h = std::max(h, im.height);
  }
  if (!images.empty()) w += gap * static_cast<int>(images.size() - 1);
  RgbImage out(w, h);
  int x0 = 0;
  for (const auto& im : images) {
    for (int y = 0; y < im.height; ++y) {
      std::copy_n(&im.px[static_cast<std::size_t>(y) * im.width * 3], static_cast<std::size_t>(im.width) * 3,
                  &out.px[(static_cast<std::size_t>(y) * w + x0) * 3]);
    }
    x0 += im.width + gap;
  }
  return out;
}

RgbImage plot_series(const std::vector<double>& y, int width, int height, bool log_y) {
  RgbImage img(width, height);
  const int ml = 40, mr = 10, mt = 10, mb = 30;
  const int pw = width - ml - mr, ph = height - mt - mb;
  for (int x = ml; x <= ml + pw; ++x) img.set(x, mt + ph, 0, 0, 0);
  for (int yy = mt; yy <= mt + ph; ++yy) img.set(ml, yy, 0, 0, 0);

  std::vector<double> v;
  for (double s : y) v.push_back(log_y ? (s > 0 ? std::log10(s) : std::numeric_limits<double>::quiet_NaN()) : s);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double s : v) {
    if (std::isfinite(s)) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  }
  if (!std::isfinite(lo)) return img;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  }
  // tick marks at the four quarter levels
  for (int q = 0; q <= 4; ++q) {
    const int yy = mt + ph - q * ph / 4;
    for (int x = ml - 4; x < ml; ++x) img.set(x, yy, 0, 0, 0);
    for (int x = ml + 1; x <= ml + pw; x += 4) img.set(x, yy, 210, 210, 210);
  }
  const std::size_t n = v.size();
  auto to_px = [&](std::size_t i, double s) {
    const double fx = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.5;
    return std::pair<int, int>{ml + static_cast<int>(std::lround(fx * pw)),
                               mt + ph - static_cast<int>(std::lround((s - lo) / (hi - lo) * ph))};
  };
  bool have_prev = false;
  std::pair<int, int> prev{};
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) {
      have_prev = false;
      continue;
    }
    const auto cur = to_px(i, v[i]);
    if (have_prev) {
      // Bresenham
      int x0 = prev.first, y0 = prev.second;
      const int x1 = cur.first, y1 = cur.second;
      const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
      const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
      int err = dx + dy;
      while (true) {
        img.set(x0, y0, 200, 40, 40);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) { err += dy; x0 += sx; }
        if (e2 <= dx) { err += dx; y0 += sy; }
      }
    } else {
      img.set(cur.first, cur.second, 200, 40, 40);
    }
    prev = cur;
    have_prev = true;
  }
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng error writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, &image.px[static_cast<std::size_t>(y) * image.width * 3]);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace acdmar::io
