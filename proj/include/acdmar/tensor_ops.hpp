#pragma once

// Dense 2-D/3-D containers and the convolution primitives the artifact model
// is built from. All math is double precision; 32-bit floats only appear in
// file I/O.

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <vector>

namespace acdmar {

// H x W image, row-major.
using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PlaneMap = Eigen::Map<Plane>;
using ConstPlaneMap = Eigen::Map<const Plane>;

// d x N mixing coefficients; column n mixes the dictionary into filter n.
using WeightMatrix = Eigen::MatrixXd;

// H x W x C tensor stored channel-major: channel c is a contiguous H x W plane.
class Stack3 {
 public:
  Stack3() = default;
  Stack3(int height, int width, int channels);

  [[nodiscard]] int height() const { return height_; }
  [[nodiscard]] int width() const { return width_; }
  [[nodiscard]] int channels() const { return channels_; }
  [[nodiscard]] std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * width_;
  }

  PlaneMap channel(int c);
  [[nodiscard]] ConstPlaneMap channel(int c) const;
  void set_channel(int c, const Plane& p);

  double& at(int y, int x, int c) { return data_[c * plane_size() + y * width_ + x]; }
  [[nodiscard]] double at(int y, int x, int c) const {
    return data_[c * plane_size() + y * width_ + x];
  }

  std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }

  void set_zero();

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

// p x p x C filter stack with odd p; filter c is a contiguous p x p block.
class FilterBank {
 public:
  FilterBank() = default;
  // Throws DimensionError when size is not a positive odd number.
  FilterBank(int size, int count);

  [[nodiscard]] int size() const { return size_; }
  [[nodiscard]] int count() const { return count_; }

  PlaneMap filter(int c);
  [[nodiscard]] ConstPlaneMap filter(int c) const;

  double& at(int u, int v, int c) { return data_[(c * size_ + u) * size_ + v]; }
  [[nodiscard]] double at(int u, int v, int c) const {
    return data_[(c * size_ + u) * size_ + v];
  }

  std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }

 private:
  int size_ = 0;
  int count_ = 0;
  std::vector<double> data_;
};

// Zero-padded "same" convolution of one image with one odd-sized filter.
Plane conv_same(const Plane& filter, const Plane& image);

// sum_n conv_same(bank[n], codes[n]).
Plane conv_bank_sum(const FilterBank& bank, const Stack3& codes);

// Exact adjoint of conv_bank_sum with respect to the codes.
Stack3 conv_transpose_bank(const FilterBank& bank, const Plane& residual);

// Channel i = conv_same(dict[i], plane).
Stack3 depthwise_conv(const FilterBank& dict, const Plane& plane);

// C x (H*W) matrix; row c is the row-major vectorization of channel c.
Eigen::MatrixXd mode3_unfold(const Stack3& t);
Stack3 mode3_fold(const Eigen::MatrixXd& m, int height, int width);

// Filter n = sum_i dict[i] * K(i, n).
FilterBank weighted_combine(const FilterBank& dict, const WeightMatrix& K);

[[nodiscard]] bool all_finite(const Plane& p);
[[nodiscard]] bool all_finite(std::span<const double> v);

}  // namespace acdmar
