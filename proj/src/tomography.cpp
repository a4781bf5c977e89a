#include <cmath>
#include <numbers>
#include <vector>

#include "acdmar/ct_sim.hpp"
#include "acdmar/error.hpp"

namespace acdmar {
namespace {

constexpr double kRayStep = 0.5;

double bilinear(const Plane& img, double row, double col) {
  const double fr = std::floor(row), fc = std::floor(col);
  const int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
  const double ar = row - fr, ac = col - fc;
  const int H = static_cast<int>(img.rows()), W = static_cast<int>(img.cols());
  double v = 0.0;
  auto px = [&](int r, int c) { return (r >= 0 && r < H && c >= 0 && c < W) ? img(r, c) : 0.0; };
  v += (1 - ar) * (1 - ac) * px(r0, c0);
  v += (1 - ar) * ac * px(r0, c0 + 1);
  v += ar * (1 - ac) * px(r0 + 1, c0);
  v += ar * ac * px(r0 + 1, c0 + 1);
  return v;
}

}  // namespace

double SinoGeometry::angle(int view) const {
  return arc_degrees * std::numbers::pi / 180.0 * view / n_views;
}

SinoGeometry SinoGeometry::for_image(int size, int n_views, double arc_degrees) {
  SinoGeometry g;
  g.n_views = n_views;
  g.n_bins = static_cast<int>(std::ceil(std::sqrt(2.0) * size)) + 1;
  g.arc_degrees = arc_degrees;
  return g;
}

Sinogram::Sinogram(const SinoGeometry& g) : geom(g), values(SinoArray::Zero(g.n_views, g.n_bins)) {
  if (g.n_views < 2) throw DimensionError("sinogram needs at least 2 views");
  if (g.n_bins < 1) throw DimensionError("sinogram needs at least 1 bin");
}

Sinogram radon(const Plane& image, const SinoGeometry& geom) {
  Sinogram s(geom);
  const double cx = (image.cols() - 1) / 2.0, cy = (image.rows() - 1) / 2.0;
  const double half_len = 0.5 * std::hypot(static_cast<double>(image.rows()),
                                           static_cast<double>(image.cols())) + 1.0;
  const int n_steps = static_cast<int>(std::ceil(2 * half_len / kRayStep)) + 1;
  const double s0 = -kRayStep * (n_steps - 1) / 2.0;
  const double tc = (geom.n_bins - 1) / 2.0;
  for (int v = 0; v < geom.n_views; ++v) {
    const double th = geom.angle(v);
    const double c = std::cos(th), sn = std::sin(th);
    for (int j = 0; j < geom.n_bins; ++j) {
      const double t = j - tc;
      double acc = 0.0;
      for (int k = 0; k < n_steps; ++k) {
        const double sp = s0 + k * kRayStep;
        const double X = t * c - sp * sn;
        const double Y = t * sn + sp * c;
        acc += bilinear(image, cy - Y, X + cx);
      }
      s.values(v, j) = acc * kRayStep;
    }
  }
  return s;
}

Plane fbp(const Sinogram& s, int image_size) {
  const int nb = s.geom.n_bins, nv = s.geom.n_views;
  // Discrete Ram-Lak kernel, unit detector spacing.
  std::vector<double> h(2 * nb - 1, 0.0);
  for (int k = -(nb - 1); k <= nb - 1; ++k) {
    double val = 0.0;
    if (k == 0) val = 0.25;
    else if (k % 2 != 0) val = -1.0 / (std::numbers::pi * std::numbers::pi * k * k);
    h[k + nb - 1] = val;
  }
  SinoArray q = SinoArray::Zero(nv, nb);
  for (int v = 0; v < nv; ++v) {
    for (int j = 0; j < nb; ++j) {
      double acc = 0.0;
      for (int m = 0; m < nb; ++m) acc += s.values(v, m) * h[j - m + nb - 1];
      q(v, j) = acc;
    }
  }
  Plane out = Plane::Zero(image_size, image_size);
  const double c0 = (image_size - 1) / 2.0;
  const double tc = (nb - 1) / 2.0;
  for (int v = 0; v < nv; ++v) {
    const double th = s.geom.angle(v);
    const double c = std::cos(th), sn = std::sin(th);
    for (int y = 0; y < image_size; ++y) {
      const double Y = c0 - y;
      for (int x = 0; x < image_size; ++x) {
        const double t = (x - c0) * c + Y * sn + tc;
        const double ft = std::floor(t);
        const int j0 = static_cast<int>(ft);
        const double a = t - ft;
        double val = 0.0;
        if (j0 >= 0 && j0 < nb) val += (1 - a) * q(v, j0);
        if (j0 + 1 >= 0 && j0 + 1 < nb) val += a * q(v, j0 + 1);
        out(y, x) += val;
      }
    }
  }
  out *= std::numbers::pi / nv;
  return out;
}

Sinogram metal_trace(const Plane& metal_mask, const SinoGeometry& geom) {
  Sinogram tr = radon(metal_mask, geom);
  tr.values = (tr.values > 1e-9).cast<double>();
  return tr;
}

InpaintResult li_inpaint(const Sinogram& s, const Sinogram& trace) {
  if (s.values.rows() != trace.values.rows() || s.values.cols() != trace.values.cols()) {
    throw DimensionError("li_inpaint: trace shape differs from sinogram");
  }
  InpaintResult res{s, 0, 0};
  const int nb = static_cast<int>(s.values.cols());
  for (Eigen::Index v = 0; v < s.values.rows(); ++v) {
    int j = 0;
    bool any_clean = false;
    for (int b = 0; b < nb; ++b) any_clean = any_clean || trace.values(v, b) < 0.5;
    if (!any_clean) {
      res.sino.values.row(v).setZero();
      ++res.full_rows;
      continue;
    }
    while (j < nb) {
      if (trace.values(v, j) < 0.5) {
        ++j;
        continue;
      }
      const int start = j;
      while (j < nb && trace.values(v, j) >= 0.5) ++j;
      const int left = start - 1, right = j;  // clean neighbours, possibly out of range
      if (left < 0 || right >= nb) {
        const double fill = left < 0 ? s.values(v, right) : s.values(v, left);
        for (int b = start; b < right; ++b) res.sino.values(v, b) = fill;
        ++res.edge_runs;
      } else {
        const double a = s.values(v, left), bval = s.values(v, right);
        for (int b = start; b < right; ++b) {
          const double w = static_cast<double>(b - left) / (right - left);
          res.sino.values(v, b) = (1 - w) * a + w * bval;
        }
      }
    }
  }
  return res;
}

}  // namespace acdmar
