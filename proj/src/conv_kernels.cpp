#include "acdmar/conv_kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace acdmar::kernels {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on the number of doubles held by one lowered patch matrix.
constexpr std::size_t kColBudget = std::size_t{1} << 20;

int rows_per_tile(const ConvShape& s) {
  const std::size_t per_row = static_cast<std::size_t>(s.in_channels) * s.ksize * s.ksize * s.width;
  return static_cast<int>(std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per_row, 1), 1, s.height));
}

// Lowers image rows [y0, y1) into col (K x npix, row-major).
void im2col(const ConvShape& s, std::span<const double> in, int y0, int y1, RowMat& col) {
  const int k = s.ksize, r = k / 2, W = s.width, H = s.height;
  const int npix = (y1 - y0) * W;
  col.setZero(static_cast<Eigen::Index>(s.in_channels) * k * k, npix);
  for (int i = 0; i < s.in_channels; ++i) {
    const double* plane = in.data() + static_cast<std::size_t>(i) * H * W;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        double* dst = col.row((static_cast<Eigen::Index>(i) * k + u) * k + v).data();
        const int dx = v - r;
        const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
        for (int y = y0; y < y1; ++y) {
          const int yy = y + u - r;
          if (yy < 0 || yy >= H) continue;
          const double* src = plane + static_cast<std::size_t>(yy) * W;
          double* row = dst + static_cast<std::size_t>(y - y0) * W;
          for (int x = x_lo; x < x_hi; ++x) row[x] = src[x + dx];
        }
      }
    }
  }
}

// Scatters col (K x npix) back into image rows [y0, y1), accumulating.
void col2im(const ConvShape& s, const RowMat& col, int y0, int y1, std::span<double> out) {
  const int k = s.ksize, r = k / 2, W = s.width, H = s.height;
  for (int i = 0; i < s.in_channels; ++i) {
    double* plane = out.data() + static_cast<std::size_t>(i) * H * W;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        const double* src = col.row((static_cast<Eigen::Index>(i) * k + u) * k + v).data();
        const int dx = v - r;
        const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
        for (int y = y0; y < y1; ++y) {
          const int yy = y + u - r;
          if (yy < 0 || yy >= H) continue;
          double* dst = plane + static_cast<std::size_t>(yy) * W;
          const double* row = src + static_cast<std::size_t>(y - y0) * W;
          for (int x = x_lo; x < x_hi; ++x) dst[x + dx] += row[x];
        }
      }
    }
  }
}

Eigen::Index kdim(const ConvShape& s) {
  return static_cast<Eigen::Index>(s.in_channels) * s.ksize * s.ksize;
}

}  // namespace

void conv_forward(const ConvShape& s, std::span<const double> in,
                  std::span<const double> w, std::span<double> out) {
  const Eigen::Map<const RowMat> wmat(w.data(), s.out_channels, kdim(s));
  const int HW = s.height * s.width;
  const int step = rows_per_tile(s);
  RowMat col;
  for (int y0 = 0; y0 < s.height; y0 += step) {
    const int y1 = std::min(s.height, y0 + step);
    im2col(s, in, y0, y1, col);
    StridedMap block(out.data() + static_cast<std::size_t>(y0) * s.width, s.out_channels,
                     (y1 - y0) * s.width, Eigen::OuterStride<>(HW));
    block.noalias() += wmat * col;
  }
}

void conv_backward_input(const ConvShape& s, std::span<const double> grad_out,
                         std::span<const double> w, std::span<double> grad_in) {
  const Eigen::Map<const RowMat> wmat(w.data(), s.out_channels, kdim(s));
  const int HW = s.height * s.width;
  const int step = rows_per_tile(s);
  RowMat col;
  for (int y0 = 0; y0 < s.height; y0 += step) {
    const int y1 = std::min(s.height, y0 + step);
    ConstStridedMap block(grad_out.data() + static_cast<std::size_t>(y0) * s.width,
                          s.out_channels, (y1 - y0) * s.width, Eigen::OuterStride<>(HW));
    col.noalias() = wmat.transpose() * block;
    col2im(s, col, y0, y1, grad_in);
  }
}

void conv_backward_weight(const ConvShape& s, std::span<const double> in,
                          std::span<const double> grad_out, std::span<double> grad_w) {
  Eigen::Map<RowMat> gw(grad_w.data(), s.out_channels, kdim(s));
  const int HW = s.height * s.width;
  const int step = rows_per_tile(s);
  RowMat col;
  for (int y0 = 0; y0 < s.height; y0 += step) {
    const int y1 = std::min(s.height, y0 + step);
    im2col(s, in, y0, y1, col);
    ConstStridedMap block(grad_out.data() + static_cast<std::size_t>(y0) * s.width,
                          s.out_channels, (y1 - y0) * s.width, Eigen::OuterStride<>(HW));
    gw.noalias() += block * col.transpose();
  }
}

}  // namespace acdmar::kernels
