#pragma once

// Dense multi-channel "same" convolution kernels on contiguous CHW buffers.
//
// Convention (shared by every caller in the library):
//   out[o, y, x] = sum_{i,u,v} w[o, i, u, v] * in[i, y + u - r, x + v - r]
// with r = k / 2 and out-of-range reads as zero. This is the cross-correlation
// form used by common deep-learning frameworks. The transpose below is its
// exact adjoint under zero padding.
//
// Buffers are row-major: in is [Cin][H][W], w is [Cout][Cin][k][k],
// out is [Cout][H][W]. Results are accumulated (+=) into the output buffer.

#include <cstddef>
#include <span>

namespace acdmar::kernels {

struct ConvShape {
  int in_channels = 1;
  int out_channels = 1;
  int height = 1;
  int width = 1;
  int ksize = 1;

  [[nodiscard]] std::size_t in_size() const {
    return static_cast<std::size_t>(in_channels) * height * width;
  }
  [[nodiscard]] std::size_t out_size() const {
    return static_cast<std::size_t>(out_channels) * height * width;
  }
  [[nodiscard]] std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * ksize * ksize;
  }
};

// out += conv(in, w)
void conv_forward(const ConvShape& s, std::span<const double> in,
                  std::span<const double> w, std::span<double> out);

// grad_in += conv^T(grad_out, w)
void conv_backward_input(const ConvShape& s, std::span<const double> grad_out,
                         std::span<const double> w, std::span<double> grad_in);

// grad_w += d<grad_out, conv(in, w)>/dw
void conv_backward_weight(const ConvShape& s, std::span<const double> in,
                          std::span<const double> grad_out,
                          std::span<double> grad_w);

}  // namespace acdmar::kernels
