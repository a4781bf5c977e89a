#include <gtest/gtest.h>

#include <functional>

#include "acdmar/autograd.hpp"
#include "acdmar/error.hpp"
#include "oracles.hpp"

using namespace acdmar;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(oracle::Rng& rng, std::vector<int> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

// Compares reverse-mode gradients of f() w.r.t. each leaf with central
// differences; returns the worst normwise relative error over leaves.
double fd_check(const std::vector<Var>& leaves, const std::function<Var()>& f, double h = 1e-6) {
  for (const auto& l : leaves) l->grad.clear();
  ad::backward(f());
  double worst = 0.0;
  for (const auto& l : leaves) {
    const std::vector<double> g = l->grad.empty() ? std::vector<double>(l->value.numel(), 0.0) : l->grad;
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < l->value.numel(); ++k) {
      const double fd = oracle::central_diff([&] { return f()->value.data[0]; }, l->value.data[k], h);
      num += (fd - g[k]) * (fd - g[k]);
      den += fd * fd;
    }
    worst = std::max(worst, std::sqrt(num / std::max(den, 1e-30)));
  }
  return worst;
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  oracle::Rng rng(1);
  Var a = ad::leaf(random_tensor(rng, {2, 2, 3, 3}), true);
  Var b = ad::leaf(random_tensor(rng, {2, 2, 3, 3}), true);
  Var s = ad::leaf(Tensor({1}, 0.7), true);
  oracle::Rng hr(2);
  const Var w1 = ad::constant(random_tensor(hr, {2, 2, 3, 3}));
  auto f = [&] {
    Var t = ad::add(ad::mul(a, b), ad::sub(ad::relu(a), ad::scale(b, 0.3)));
    t = ad::add(ad::scale_by(ad::softplus(t), s), ad::mul(t, w1));
    return ad::add(ad::sum_square(t), ad::sum_abs(ad::sub(a, b)));
  };
  EXPECT_LT(fd_check({a, b, s}, f), 1e-6);
}

TEST(Autograd, SharedLeafAccumulates) {
  Var x = ad::leaf(Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}), true);
  ad::backward(ad::sum_square(ad::mul(x, x)));
  // d/dx sum x^4 = 4 x^3
  EXPECT_NEAR(x->grad[0], 4.0, 1e-12);
  EXPECT_NEAR(x->grad[1], -32.0, 1e-12);
  EXPECT_NEAR(x->grad[2], 0.5, 1e-12);
}

TEST(Autograd, SoftplusValues) {
  Var x = ad::constant(Tensor({3}, std::vector<double>{0.0, 40.0, -40.0}));
  const std::vector<double> v = ad::softplus(x)->value.data;
  EXPECT_NEAR(v[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(v[1], 40.0, 1e-12);
  EXPECT_GT(v[2], 0.0);
  EXPECT_LT(v[2], 1e-17);
}

TEST(Autograd, ShapeMismatchThrows) {
  Var a = ad::constant(Tensor({1, 1, 2, 2}));
  Var b = ad::constant(Tensor({1, 1, 2, 3}));
  EXPECT_THROW(ad::add(a, b), DimensionError);
}

TEST(Autograd, ConcatAndSlice) {
  oracle::Rng rng(3);
  Var a = ad::leaf(random_tensor(rng, {2, 1, 3, 4}), true);
  Var b = ad::leaf(random_tensor(rng, {2, 3, 3, 4}), true);
  Var c = ad::concat_channels(a, b);
  ASSERT_EQ(c->shape(), (std::vector<int>{2, 4, 3, 4}));
  const Var back = ad::slice_channels(c, 1, 4);
  EXPECT_EQ(back->value.data, b->value.data);
  oracle::Rng hr(4);
  const Var r = ad::constant(random_tensor(hr, {2, 2, 3, 4}));
  auto f = [&] { return ad::sum_square(ad::mul(ad::slice_channels(ad::concat_channels(a, b), 0, 2), r)); };
  EXPECT_LT(fd_check({a, b}, f), 1e-6);
}

TEST(Autograd, Conv2dMatchesNaiveOracle) {
  oracle::Rng rng(5);
  Tensor x = random_tensor(rng, {1, 2, 5, 6});
  Tensor w = random_tensor(rng, {3, 2, 3, 3});
  Tensor b = random_tensor(rng, {3});
  const Var out = ad::conv2d(ad::constant(x), ad::constant(w), ad::constant(b));
  for (int co = 0; co < 3; ++co) {
    Plane ref = Plane::Constant(5, 6, b.data[co]);
    for (int ci = 0; ci < 2; ++ci) {
      Plane f(3, 3), img(5, 6);
      for (int u = 0; u < 3; ++u) for (int v = 0; v < 3; ++v) f(u, v) = w.data[((co * 2 + ci) * 3 + u) * 3 + v];
      for (int y = 0; y < 5; ++y) for (int xx = 0; xx < 6; ++xx) img(y, xx) = x.data[(ci * 5 + y) * 6 + xx];
      ref += oracle::conv(f, img);
    }
    for (int y = 0; y < 5; ++y) {
      for (int xx = 0; xx < 6; ++xx) EXPECT_NEAR(out->value.data[(co * 5 + y) * 6 + xx], ref(y, xx), 1e-12);
    }
  }
}

TEST(Autograd, Conv2dGradients) {
  oracle::Rng rng(6);
  Var x = ad::leaf(random_tensor(rng, {2, 2, 5, 4}), true);
  Var w = ad::leaf(random_tensor(rng, {3, 2, 3, 3}), true);
  Var b = ad::leaf(random_tensor(rng, {3}), true);
  oracle::Rng hr(7);
  const Var r = ad::constant(random_tensor(hr, {2, 3, 5, 4}));
  auto f = [&] { return ad::sum_square(ad::mul(ad::conv2d(x, w, b), r)); };
  EXPECT_LT(fd_check({x, w, b}, f), 1e-6);
}

TEST(Autograd, PerSampleConvolutionFamily) {
  oracle::Rng rng(8);
  Var x = ad::leaf(random_tensor(rng, {2, 3, 6, 5}), true);
  Var w = ad::leaf(random_tensor(rng, {2, 1, 3, 3, 3}), true);
  Var r = ad::leaf(random_tensor(rng, {2, 1, 6, 5}), true);
  oracle::Rng hr(9);
  const Var c1 = ad::constant(random_tensor(hr, {2, 1, 6, 5}));
  const Var c2 = ad::constant(random_tensor(hr, {2, 3, 6, 5}));
  const Var c3 = ad::constant(random_tensor(hr, {2, 1, 3, 3, 3}));
  EXPECT_LT(fd_check({x, w}, [&] { return ad::sum_square(ad::mul(ad::conv_per_sample(x, w), c1)); }), 1e-6);
  EXPECT_LT(fd_check({r, w}, [&] { return ad::sum_square(ad::mul(ad::conv_transpose_per_sample(r, w), c2)); }), 1e-6);
  EXPECT_LT(fd_check({x, r}, [&] { return ad::sum_square(ad::mul(ad::conv_weight_grad(x, r, 3), c3)); }), 1e-6);
}

TEST(Autograd, PerSampleAdjointIdentities) {
  oracle::Rng rng(10);
  const Var x = ad::constant(random_tensor(rng, {2, 3, 6, 5}));
  const Var w = ad::constant(random_tensor(rng, {2, 1, 3, 3, 3}));
  const Var r = ad::constant(random_tensor(rng, {2, 1, 6, 5}));
  auto dot = [](const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
  };
  const double lhs = dot(ad::conv_per_sample(x, w)->value, r->value);
  EXPECT_NEAR(lhs, dot(x->value, ad::conv_transpose_per_sample(r, w)->value), 1e-10 * std::abs(lhs) + 1e-12);
  EXPECT_NEAR(lhs, dot(w->value, ad::conv_weight_grad(x, r, 3)->value), 1e-10 * std::abs(lhs) + 1e-12);
}

TEST(Autograd, DictionaryOps) {
  oracle::Rng rng(11);
  Var dict = ad::leaf(random_tensor(rng, {4, 3, 3}), true);
  Var K = ad::leaf(random_tensor(rng, {2, 4, 2}), true);
  Var bank = ad::leaf(random_tensor(rng, {2, 1, 2, 3, 3}), true);
  const Var F = ad::combine_filters(dict, K);
  ASSERT_EQ(F->shape(), (std::vector<int>{2, 1, 2, 3, 3}));
  for (int b = 0; b < 2; ++b) {
    for (int n = 0; n < 2; ++n) {
      for (int k = 0; k < 9; ++k) {
        double ref = 0.0;
        for (int i = 0; i < 4; ++i) ref += dict->value.data[i * 9 + k] * K->value.data[(b * 4 + i) * 2 + n];
        EXPECT_NEAR(F->value.data[(b * 2 + n) * 9 + k], ref, 1e-13);
      }
    }
  }
  const Var P = ad::project_on_dict(dict, bank);
  for (int i = 0; i < 4; ++i) {
    double ref = 0.0;
    for (int k = 0; k < 9; ++k) ref += dict->value.data[i * 9 + k] * bank->value.data[9 + k];
    EXPECT_NEAR(P->value.data[i * 2 + 1], ref, 1e-13);
  }
  oracle::Rng hr(12);
  const Var c1 = ad::constant(random_tensor(hr, {2, 1, 2, 3, 3}));
  const Var c2 = ad::constant(random_tensor(hr, {2, 4, 2}));
  const Var c3 = ad::constant(random_tensor(hr, {3, 1, 4, 3, 3}));
  EXPECT_LT(fd_check({dict, K}, [&] { return ad::sum_square(ad::mul(ad::combine_filters(dict, K), c1)); }), 1e-6);
  EXPECT_LT(fd_check({dict, bank}, [&] { return ad::sum_square(ad::mul(ad::project_on_dict(dict, bank), c2)); }), 1e-6);
  EXPECT_LT(fd_check({dict}, [&] { return ad::sum_square(ad::mul(ad::broadcast_dict(dict, 3), c3)); }), 1e-6);
}

TEST(Autograd, ColumnOps) {
  oracle::Rng rng(13);
  Var x = ad::leaf(random_tensor(rng, {2, 4, 3}), true);
  Var w = ad::leaf(random_tensor(rng, {4, 4}), true);
  Var b = ad::leaf(random_tensor(rng, {4}), true);
  const Var n = ad::normalize_columns(x);
  for (int bb = 0; bb < 2; ++bb) {
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int i = 0; i < 4; ++i) s += std::pow(n->value.data[(bb * 4 + i) * 3 + c], 2);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  oracle::Rng hr(14);
  const Var c1 = ad::constant(random_tensor(hr, {2, 4, 3}));
  EXPECT_LT(fd_check({x, w, b}, [&] {
    return ad::sum_square(ad::mul(ad::normalize_columns(ad::linear_columns(x, w, b)), c1));
  }), 1e-6);
}

TEST(Autograd, BatchNormTrainStatistics) {
  oracle::Rng rng(15);
  Var x = ad::constant(random_tensor(rng, {3, 2, 4, 4}, 3.0));
  Var g = ad::constant(Tensor({2}, 1.0));
  Var b = ad::constant(Tensor({2}, 0.0));
  std::vector<double> rm(2, 0.0), rv(2, 1.0);
  double tracked = 0.0;
  ad::BatchNormState st{&rm, &rv, &tracked};
  const Var y = ad::batch_norm(x, g, b, st, true);
  for (int c = 0; c < 2; ++c) {
    double s = 0.0, s2 = 0.0, xs = 0.0;
    for (int n = 0; n < 3; ++n) {
      for (int i = 0; i < 16; ++i) {
        const double v = y->value.data[(n * 2 + c) * 16 + i];
        s += v;
        s2 += v * v;
        xs += x->value.data[(n * 2 + c) * 16 + i];
      }
    }
    EXPECT_NEAR(s / 48, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 48, 1.0, 1e-4);  // eps keeps it just under one
    EXPECT_NEAR(rm[c], 0.1 * xs / 48, 1e-12);
  }
  EXPECT_EQ(tracked, 1.0);
}

TEST(Autograd, BatchNormGradients) {
  oracle::Rng rng(16);
  Var x = ad::leaf(random_tensor(rng, {2, 2, 3, 3}), true);
  Var g = ad::leaf(random_tensor(rng, {2}), true);
  Var b = ad::leaf(random_tensor(rng, {2}), true);
  oracle::Rng hr(17);
  const Var c1 = ad::constant(random_tensor(hr, {2, 2, 3, 3}));
  const Var c2 = ad::constant(random_tensor(hr, {2, 2, 3, 3}));
  auto f = [&](bool train) {
    return [&, train] {
      std::vector<double> rm(2, 0.3), rv(2, 2.0);
      double tracked = 1.0;
      return ad::sum_square(ad::add(ad::mul(ad::batch_norm(x, g, b, {&rm, &rv, &tracked}, train), c1), c2));
    };
  };
  EXPECT_LT(fd_check({x, g, b}, f(true)), 1e-6);
  EXPECT_LT(fd_check({x, g, b}, f(false)), 1e-6);
}

TEST(Autograd, BatchNormEvalFallback) {
  oracle::Rng rng(18);
  const Var x = ad::constant(random_tensor(rng, {1, 2, 3, 3}));
  std::vector<double> rm(2, 5.0), rv(2, 9.0);
  double tracked = 0.0;
  bool fallback = false;
  const Var y = ad::batch_norm(x, ad::constant(Tensor({2}, 1.0)), ad::constant(Tensor({2}, 0.0)),
                               {&rm, &rv, &tracked}, false, &fallback);
  EXPECT_TRUE(fallback);
  EXPECT_EQ(y->value.data, x->value.data);
  tracked = 1.0;
  fallback = false;
  const Var z = ad::batch_norm(x, ad::constant(Tensor({2}, 1.0)), ad::constant(Tensor({2}, 0.0)),
                               {&rm, &rv, &tracked}, false, &fallback);
  EXPECT_FALSE(fallback);
  EXPECT_NEAR(z->value.data[0], (x->value.data[0] - 5.0) / std::sqrt(9.0 + 1e-5), 1e-12);
}
