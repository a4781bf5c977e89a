#include "acdmar/tensor_ops.hpp"

#include <cmath>
#include <string>

#include "acdmar/conv_kernels.hpp"
#include "acdmar/error.hpp"

namespace acdmar {

Stack3::Stack3(int height, int width, int channels)
    : height_(height), width_(width), channels_(channels),
      data_(static_cast<std::size_t>(height) * width * channels, 0.0) {
  if (height < 1 || width < 1 || channels < 1) {
    throw DimensionError("Stack3 dimensions must be positive");
  }
}

PlaneMap Stack3::channel(int c) {
  return PlaneMap(data_.data() + c * plane_size(), height_, width_);
}

ConstPlaneMap Stack3::channel(int c) const {
  return ConstPlaneMap(data_.data() + c * plane_size(), height_, width_);
}

void Stack3::set_channel(int c, const Plane& p) {
  if (p.rows() != height_ || p.cols() != width_) {
    throw DimensionError("Stack3::set_channel: plane shape mismatch");
  }
  channel(c) = p;
}

void Stack3::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

FilterBank::FilterBank(int size, int count)
    : size_(size), count_(count),
      data_(static_cast<std::size_t>(size) * size * count, 0.0) {
  if (size < 1 || size % 2 == 0) {
    throw DimensionError("filter size must be odd, got " + std::to_string(size));
  }
  if (count < 1) throw DimensionError("filter count must be positive");
}

PlaneMap FilterBank::filter(int c) {
  return PlaneMap(data_.data() + static_cast<std::size_t>(c) * size_ * size_, size_, size_);
}

ConstPlaneMap FilterBank::filter(int c) const {
  return ConstPlaneMap(data_.data() + static_cast<std::size_t>(c) * size_ * size_, size_, size_);
}

Plane conv_same(const Plane& filter, const Plane& image) {
  if (filter.rows() != filter.cols() || filter.rows() % 2 == 0) {
    throw DimensionError("conv_same: filter must be square with odd size");
  }
  Plane out = Plane::Zero(image.rows(), image.cols());
  const kernels::ConvShape s{1, 1, static_cast<int>(image.rows()),
                             static_cast<int>(image.cols()), static_cast<int>(filter.rows())};
  kernels::conv_forward(s, {image.data(), static_cast<std::size_t>(image.size())},
                        {filter.data(), static_cast<std::size_t>(filter.size())},
                        {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Plane conv_bank_sum(const FilterBank& bank, const Stack3& codes) {
  if (bank.count() != codes.channels()) {
    throw DimensionError("conv_bank_sum: bank has " + std::to_string(bank.count()) +
                         " filters but codes have " + std::to_string(codes.channels()) +
                         " channels");
  }
  Plane out = Plane::Zero(codes.height(), codes.width());
  const kernels::ConvShape s{codes.channels(), 1, codes.height(), codes.width(), bank.size()};
  kernels::conv_forward(s, codes.data(), bank.data(),
                        {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

Stack3 conv_transpose_bank(const FilterBank& bank, const Plane& residual) {
  Stack3 out(static_cast<int>(residual.rows()), static_cast<int>(residual.cols()), bank.count());
  const kernels::ConvShape s{bank.count(), 1, out.height(), out.width(), bank.size()};
  kernels::conv_backward_input(s, {residual.data(), static_cast<std::size_t>(residual.size())},
                               bank.data(), out.data());
  return out;
}

Stack3 depthwise_conv(const FilterBank& dict, const Plane& plane) {
  Stack3 out(static_cast<int>(plane.rows()), static_cast<int>(plane.cols()), dict.count());
  // One input channel fanned out to `count` output channels.
  const kernels::ConvShape s{1, dict.count(), out.height(), out.width(), dict.size()};
  kernels::conv_forward(s, {plane.data(), static_cast<std::size_t>(plane.size())}, dict.data(),
                        out.data());
  return out;
}

Eigen::MatrixXd mode3_unfold(const Stack3& t) {
  const auto hw = static_cast<Eigen::Index>(t.plane_size());
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMat>(t.data().data(), t.channels(), hw);
}

Stack3 mode3_fold(const Eigen::MatrixXd& m, int height, int width) {
  if (m.cols() != static_cast<Eigen::Index>(height) * width) {
    throw DimensionError("mode3_fold: column count does not match height*width");
  }
  Stack3 t(height, width, static_cast<int>(m.rows()));
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

FilterBank weighted_combine(const FilterBank& dict, const WeightMatrix& K) {
  if (K.rows() != dict.count()) {
    throw DimensionError("weighted_combine: K has " + std::to_string(K.rows()) +
                         " rows, dictionary has " + std::to_string(dict.count()) + " filters");
  }
  const int n_out = static_cast<int>(K.cols());
  FilterBank out(dict.size(), n_out);
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Index p2 = static_cast<Eigen::Index>(dict.size()) * dict.size();
  const Eigen::Map<const RowMat> d(dict.data().data(), dict.count(), p2);
  Eigen::Map<RowMat> o(out.data().data(), n_out, p2);
  o.noalias() = K.transpose() * d;
  return out;
}

bool all_finite(const Plane& p) { return p.isFinite().all(); }

bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace acdmar
