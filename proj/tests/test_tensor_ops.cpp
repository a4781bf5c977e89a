#include <gtest/gtest.h>

#include "acdmar/conv_kernels.hpp"
#include "acdmar/error.hpp"
#include "acdmar/tensor_ops.hpp"
#include "oracles.hpp"

using namespace acdmar;

namespace {

Plane delta(int p) {
  Plane f = Plane::Zero(p, p);
  f(p / 2, p / 2) = 1.0;
  return f;
}

FilterBank delta_bank(int p, int c) {
  FilterBank b(p, c);
  for (int k = 0; k < c; ++k) b.at(p / 2, p / 2, k) = 1.0;
  return b;
}

}  // namespace

TEST(FilterBank, RejectsEvenSize) {
  EXPECT_THROW(FilterBank(4, 2), DimensionError);
  EXPECT_THROW(FilterBank(0, 2), DimensionError);
  EXPECT_NO_THROW(FilterBank(3, 2));
}

TEST(ConvSame, DeltaFilterIsIdentity) {
  oracle::Rng rng(1);
  const Plane img = rng.plane(7, 9);
  EXPECT_TRUE((conv_same(delta(5), img) == img).all());
}

TEST(ConvSame, ZeroImageGivesZero) {
  oracle::Rng rng(2);
  EXPECT_EQ(conv_same(rng.plane(3, 3), Plane::Zero(6, 5)).abs().maxCoeff(), 0.0);
}

TEST(ConvSame, OnesFilterOnOnesImage) {
  const Plane out = conv_same(Plane::Ones(3, 3), Plane::Ones(3, 3));
  EXPECT_DOUBLE_EQ(out(1, 1), 9.0);
  EXPECT_DOUBLE_EQ(out(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(out(0, 2), 4.0);
  EXPECT_DOUBLE_EQ(out(2, 0), 4.0);
  EXPECT_DOUBLE_EQ(out(2, 2), 4.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 6.0);
}

TEST(ConvSame, OrientationIsCorrelation) {
  // out[y,x] = sum f[u,v] in[y+u-r, x+v-r]: an off-center tap at (0,1) reads the pixel above.
  Plane f = Plane::Zero(3, 3);
  f(0, 1) = 1.0;
  Plane img = Plane::Zero(5, 5);
  img(1, 2) = 1.0;
  const Plane out = conv_same(f, img);
  EXPECT_DOUBLE_EQ(out(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(out.sum(), 1.0);
}

TEST(ConvSame, MatchesDirectSum) {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int p = 2 * rng.integer(0, 4) + 1;
    const Plane f = rng.plane(p, p), img = rng.plane(rng.integer(1, 13), rng.integer(1, 13));
    const Plane ref = oracle::conv(f, img);
    EXPECT_LT((conv_same(f, img) - ref).abs().maxCoeff(), 1e-12);
  }
}

TEST(ConvBankSum, SingleChannelReducesToConvSame) {
  oracle::Rng rng(4);
  FilterBank b = rng.bank(5, 1);
  Stack3 m = rng.stack(8, 6, 1);
  const Plane a = conv_bank_sum(b, m);
  const Plane c = conv_same(b.filter(0), m.channel(0));
  EXPECT_LT((a - c).abs().maxCoeff(), 1e-14);
}

TEST(ConvBankSum, ZeroCodes) {
  oracle::Rng rng(5);
  EXPECT_EQ(conv_bank_sum(rng.bank(3, 3), Stack3(6, 6, 3)).abs().maxCoeff(), 0.0);
}

TEST(ConvBankSum, MatchesTripleLoop) {
  oracle::Rng rng(6);
  const FilterBank b = rng.bank(3, 3);
  const Stack3 m = rng.stack(6, 6, 3);
  Plane ref = Plane::Zero(6, 6);
  for (int n = 0; n < 3; ++n) ref += oracle::conv(oracle::filter_of(b, n), oracle::channel_of(m, n));
  EXPECT_LT((conv_bank_sum(b, m) - ref).abs().maxCoeff(), 1e-12);
}

TEST(ConvBankSum, ChannelMismatchThrows) {
  oracle::Rng rng(7);
  EXPECT_THROW(conv_bank_sum(rng.bank(3, 2), rng.stack(4, 4, 3)), DimensionError);
}

TEST(ConvBankSum, Linearity) {
  oracle::Rng rng(8);
  const FilterBank b = rng.bank(5, 2);
  const Stack3 m1 = rng.stack(9, 7, 2), m2 = rng.stack(9, 7, 2);
  const double a = 1.7, c = -0.4;
  Stack3 mix(9, 7, 2);
  for (std::size_t i = 0; i < mix.data().size(); ++i) mix.data()[i] = a * m1.data()[i] + c * m2.data()[i];
  const Plane lhs = conv_bank_sum(b, mix);
  const Plane rhs = a * conv_bank_sum(b, m1) + c * conv_bank_sum(b, m2);
  EXPECT_LT((lhs - rhs).abs().maxCoeff(), 1e-10);
}

TEST(ConvTransposeBank, DeltaFiltersCopyResidual) {
  oracle::Rng rng(9);
  const Plane R = rng.plane(5, 7);
  const Stack3 out = conv_transpose_bank(delta_bank(3, 4), R);
  ASSERT_EQ(out.channels(), 4);
  for (int n = 0; n < 4; ++n) EXPECT_TRUE((Plane(out.channel(n)) == R).all());
}

TEST(ConvTransposeBank, ZeroResidual) {
  oracle::Rng rng(10);
  const Stack3 out = conv_transpose_bank(rng.bank(3, 2), Plane::Zero(4, 4));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(ConvTransposeBank, MatchesScatterOracle) {
  oracle::Rng rng(11);
  const FilterBank b = rng.bank(5, 3);
  const Plane R = rng.plane(8, 8);
  const Stack3 got = conv_transpose_bank(b, R), ref = oracle::transpose_bank(b, R);
  for (std::size_t i = 0; i < got.data().size(); ++i) EXPECT_NEAR(got.data()[i], ref.data()[i], 1e-12);
}

TEST(ConvTransposeBank, AdjointIdentity) {
  oracle::Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const int N = rng.integer(1, 4), p = 2 * rng.integer(0, 3) + 1;
    const FilterBank b = rng.bank(p, N);
    const Stack3 M = rng.stack(8, 8, N);
    const Plane R = rng.plane(8, 8);
    const double lhs = oracle::dot(conv_bank_sum(b, M), R);
    const double rhs = oracle::dot(M, conv_transpose_bank(b, R));
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST(DepthwiseConv, SingleFilterReducesToConvSame) {
  oracle::Rng rng(13);
  const FilterBank d = rng.bank(3, 1);
  const Plane img = rng.plane(6, 6);
  EXPECT_LT((Plane(depthwise_conv(d, img).channel(0)) - conv_same(d.filter(0), img)).abs().maxCoeff(), 1e-14);
}

TEST(DepthwiseConv, DeltaDictionaryCopiesPlane) {
  oracle::Rng rng(14);
  const Plane img = rng.plane(5, 5);
  const Stack3 out = depthwise_conv(delta_bank(5, 3), img);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE((Plane(out.channel(c)) == img).all());
}

TEST(DepthwiseConv, ChannelwiseMatchOnLargerFilters) {
  oracle::Rng rng(15);
  const FilterBank d = rng.bank(9, 4);
  const Plane img = rng.plane(12, 12);
  const Stack3 out = depthwise_conv(d, img);
  for (int c = 0; c < 4; ++c) {
    EXPECT_LT((Plane(out.channel(c)) - oracle::conv(oracle::filter_of(d, c), img)).abs().maxCoeff(), 1e-12);
  }
}

TEST(Mode3Unfold, FiberOfSinglePixel) {
  Stack3 t(1, 1, 4);
  for (int c = 0; c < 4; ++c) t.at(0, 0, c) = c + 0.5;
  const Eigen::MatrixXd m = mode3_unfold(t);
  ASSERT_EQ(m.rows(), 4);
  ASSERT_EQ(m.cols(), 1);
  for (int c = 0; c < 4; ++c) EXPECT_EQ(m(c, 0), c + 0.5);
}

TEST(Mode3Unfold, RowMajorVectorization) {
  Stack3 t(2, 2, 2);
  t.at(0, 0, 0) = 1;
  t.at(0, 1, 0) = 2;
  t.at(1, 0, 0) = 3;
  t.at(1, 1, 0) = 4;
  const Eigen::MatrixXd m = mode3_unfold(t);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(0, 1), 2);
  EXPECT_EQ(m(0, 2), 3);
  EXPECT_EQ(m(0, 3), 4);
}

TEST(Mode3Unfold, FoldRoundTripIsExact) {
  oracle::Rng rng(16);
  const Stack3 t = rng.stack(5, 3, 4);
  const Stack3 back = mode3_fold(mode3_unfold(t), 5, 3);
  for (std::size_t i = 0; i < t.data().size(); ++i) EXPECT_EQ(back.data()[i], t.data()[i]);
}

TEST(WeightedCombine, OneHotSelectsSlice) {
  oracle::Rng rng(17);
  const FilterBank d = rng.bank(3, 4);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(4, 2);
  K(2, 0) = 1.0;
  K(0, 1) = 1.0;
  const FilterBank f = weighted_combine(d, K);
  EXPECT_TRUE((Plane(f.filter(0)) == Plane(d.filter(2))).all());
  EXPECT_TRUE((Plane(f.filter(1)) == Plane(d.filter(0))).all());
}

TEST(WeightedCombine, EqualColumnsGiveEqualFilters) {
  oracle::Rng rng(18);
  const FilterBank d = rng.bank(5, 3);
  Eigen::MatrixXd K(3, 2);
  K.col(0) = rng.matrix(3, 1);
  K.col(1) = K.col(0);
  const FilterBank f = weighted_combine(d, K);
  EXPECT_TRUE((Plane(f.filter(0)) == Plane(f.filter(1))).all());
}

TEST(WeightedCombine, MatchesSummation) {
  oracle::Rng rng(19);
  const FilterBank d = rng.bank(3, 4);
  const Eigen::MatrixXd K = rng.matrix(4, 2);
  const FilterBank f = weighted_combine(d, K);
  for (int n = 0; n < 2; ++n) {
    for (int u = 0; u < 3; ++u) {
      for (int v = 0; v < 3; ++v) {
        double s = 0.0;
        for (int i = 0; i < 4; ++i) s += d.at(u, v, i) * K(i, n);
        EXPECT_NEAR(f.at(u, v, n), s, 1e-12);
      }
    }
  }
}

TEST(WeightedCombine, RowMismatchThrows) {
  oracle::Rng rng(20);
  EXPECT_THROW(weighted_combine(rng.bank(3, 4), rng.matrix(3, 2)), DimensionError);
}

TEST(WeightedCombine, Bilinear) {
  oracle::Rng rng(21);
  const FilterBank d1 = rng.bank(3, 3), d2 = rng.bank(3, 3);
  const Eigen::MatrixXd K1 = rng.matrix(3, 2), K2 = rng.matrix(3, 2);
  FilterBank dsum(3, 3);
  for (std::size_t i = 0; i < dsum.data().size(); ++i) dsum.data()[i] = 2.0 * d1.data()[i] - d2.data()[i];
  const FilterBank lhs = weighted_combine(dsum, K1 + 3.0 * K2);
  const FilterBank a = weighted_combine(d1, K1), b = weighted_combine(d1, K2), c = weighted_combine(d2, K1),
                   e = weighted_combine(d2, K2);
  for (std::size_t i = 0; i < lhs.data().size(); ++i) {
    const double rhs = 2 * a.data()[i] + 6 * b.data()[i] - c.data()[i] - 3 * e.data()[i];
    EXPECT_NEAR(lhs.data()[i], rhs, 1e-12);
  }
}

TEST(AllFinite, DetectsNaN) {
  Plane p = Plane::Zero(2, 2);
  EXPECT_TRUE(all_finite(p));
  p(1, 1) = std::nan("");
  EXPECT_FALSE(all_finite(p));
}

TEST(ConvKernels, TiledPathMatchesDirectOnLargeInput) {
  // Large enough that the column buffer is split into several tiles.
  oracle::Rng rng(22);
  kernels::ConvShape s{3, 2, 150, 140, 9};
  std::vector<double> in(s.in_size()), w(s.weight_size()), out(s.out_size(), 0.0);
  for (double& v : in) v = rng.normal();
  for (double& v : w) v = rng.normal();
  kernels::conv_forward(s, in, w, out);
  for (int trial = 0; trial < 40; ++trial) {
    const int o = rng.integer(0, 1), y = rng.integer(0, 149), x = rng.integer(0, 139);
    double ref = 0.0;
    for (int c = 0; c < 3; ++c) {
      Plane img(150, 140), f(9, 9);
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(c) * 150 * 140, 150 * 140, img.data());
      std::copy_n(w.begin() + (static_cast<std::ptrdiff_t>(o) * 3 + c) * 81, 81, f.data());
      ref += oracle::conv_at(f, img, y, x);
    }
    EXPECT_NEAR(out[(static_cast<std::size_t>(o) * 150 + y) * 140 + x], ref, 1e-10);
  }
}

TEST(ConvKernels, BackwardPassesAreAdjoints) {
  oracle::Rng rng(23);
  kernels::ConvShape s{3, 4, 11, 9, 3};
  std::vector<double> in(s.in_size()), w(s.weight_size()), g(s.out_size());
  for (double& v : in) v = rng.normal();
  for (double& v : w) v = rng.normal();
  for (double& v : g) v = rng.normal();
  std::vector<double> out(s.out_size(), 0.0), gin(s.in_size(), 0.0), gw(s.weight_size(), 0.0);
  kernels::conv_forward(s, in, w, out);
  kernels::conv_backward_input(s, g, w, gin);
  kernels::conv_backward_weight(s, in, g, gw);
  double lhs = 0.0, rhs_in = 0.0, rhs_w = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) lhs += out[i] * g[i];
  for (std::size_t i = 0; i < in.size(); ++i) rhs_in += in[i] * gin[i];
  for (std::size_t i = 0; i < w.size(); ++i) rhs_w += w[i] * gw[i];
  EXPECT_NEAR(lhs, rhs_in, 1e-10 * std::abs(lhs));
  EXPECT_NEAR(lhs, rhs_w, 1e-10 * std::abs(lhs));
}
