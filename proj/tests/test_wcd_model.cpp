#include <gtest/gtest.h>

#include "acdmar/error.hpp"
#include "acdmar/wcd_model.hpp"
#include "oracles.hpp"

using namespace acdmar;

namespace {

struct Instance {
  Dictionary D;
  Eigen::MatrixXd K;
  CodeTensor M;
  MaskedScene scene;
  Plane X;
};

Instance random_instance(std::uint64_t seed, int H = 10, int W = 10, int p = 3, int d = 4, int N = 2) {
  oracle::Rng rng(seed);
  Instance in;
  in.D = rng.bank(p, d);
  in.K = rng.matrix(d, N);
  in.M = rng.stack(H, W, N);
  in.scene.Y = rng.plane(H, W);
  in.scene.I = rng.mask(H, W, 0.2);
  in.X = rng.plane(H, W);
  return in;
}

double g_of(const Instance& in, const Eigen::MatrixXd& K, const CodeTensor& M) {
  return fidelity(in.scene, in.X, synthesize_artifact(in.D, K, M));
}

}  // namespace

TEST(SynthesizeArtifact, ZeroCodes) {
  auto in = random_instance(1);
  in.M.set_zero();
  EXPECT_EQ(synthesize_artifact(in.D, in.K, in.M).abs().maxCoeff(), 0.0);
}

TEST(SynthesizeArtifact, OneHotSelection) {
  oracle::Rng rng(2);
  const Dictionary D = rng.bank(5, 3);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(3, 1);
  K(1, 0) = 1.0;
  const CodeTensor M = rng.stack(7, 7, 1);
  const Plane ref = oracle::conv(oracle::filter_of(D, 1), oracle::channel_of(M, 0));
  EXPECT_LT((synthesize_artifact(D, K, M) - ref).abs().maxCoeff(), 1e-13);
}

TEST(SynthesizeArtifact, MatchesExpandedSum) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto in = random_instance(10 + s, 8, 8, 3, 4, 3);
    EXPECT_LT((synthesize_artifact(in.D, in.K, in.M) - oracle::synthesize(in.D, in.K, in.M)).abs().maxCoeff(), 1e-12);
  }
}

TEST(SynthesizeArtifact, ScaleAmbiguity) {
  auto in = random_instance(3);
  Eigen::MatrixXd K2 = in.K;
  CodeTensor M2 = in.M;
  const double c[] = {2.5, -0.3};
  for (int n = 0; n < 2; ++n) {
    K2.col(n) *= c[n];
    for (int y = 0; y < M2.height(); ++y) {
      for (int x = 0; x < M2.width(); ++x) M2.at(y, x, n) /= c[n];
    }
  }
  EXPECT_LT((synthesize_artifact(in.D, K2, M2) - synthesize_artifact(in.D, in.K, in.M)).abs().maxCoeff(), 1e-12);
}

TEST(SynthesizeArtifact, DimensionMismatchThrows) {
  auto in = random_instance(4);
  EXPECT_THROW(synthesize_artifact(in.D, Eigen::MatrixXd::Ones(3, 2), in.M), DimensionError);
  EXPECT_THROW(synthesize_artifact(in.D, Eigen::MatrixXd::Ones(4, 3), in.M), DimensionError);
}

TEST(MaskedResidual, PerfectFitIsZero) {
  oracle::Rng rng(5);
  MaskedScene sc;
  const Plane X = rng.plane(6, 6), A = rng.plane(6, 6);
  sc.Y = X + A;
  sc.I = rng.mask(6, 6, 0.3);
  EXPECT_LT(masked_residual(sc, X, A).abs().maxCoeff(), 1e-15);
}

TEST(MaskedResidual, FullyMaskedIsZero) {
  oracle::Rng rng(6);
  MaskedScene sc;
  sc.Y = rng.plane(5, 5);
  sc.I = Plane::Zero(5, 5);
  EXPECT_EQ(masked_residual(sc, rng.plane(5, 5), rng.plane(5, 5)).abs().maxCoeff(), 0.0);
}

TEST(MaskedResidual, PerturbationPassesThroughMask) {
  oracle::Rng rng(7);
  MaskedScene sc;
  const Plane X = rng.plane(6, 6), A = rng.plane(6, 6), eps = rng.plane(6, 6);
  sc.I = rng.mask(6, 6, 0.3);
  sc.Y = X + A + sc.I * eps;
  // R = I (A + X - Y) = -I eps
  EXPECT_LT((masked_residual(sc, X, A) + sc.I * eps).abs().maxCoeff(), 1e-14);
}

TEST(MaskedScene, ValidateRejectsNonBinaryMask) {
  MaskedScene sc;
  sc.Y = Plane::Zero(4, 4);
  sc.I = Plane::Ones(4, 4);
  EXPECT_NO_THROW(sc.validate());
  sc.I(1, 1) = 0.5;
  EXPECT_THROW(sc.validate(), Error);
  sc.I(1, 1) = 1.0;
  sc.X_gt = Plane::Zero(3, 4);
  EXPECT_THROW(sc.validate(), DimensionError);
}

TEST(GradK, ZeroResidualOrCodes) {
  auto in = random_instance(8);
  EXPECT_EQ(grad_K(in.D, in.M, Plane::Zero(10, 10)).cwiseAbs().maxCoeff(), 0.0);
  CodeTensor zero(10, 10, 2);
  EXPECT_EQ(grad_K(in.D, zero, in.scene.Y).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GradK, EntryFormula) {
  const auto in = random_instance(9);
  const Plane R = masked_residual(in.scene, in.X, synthesize_artifact(in.D, in.K, in.M));
  const Eigen::MatrixXd G = grad_K(in.D, in.M, R);
  for (int i = 0; i < 4; ++i) {
    for (int n = 0; n < 2; ++n) {
      const double ref = 2.0 * oracle::dot(oracle::conv(oracle::filter_of(in.D, i), oracle::channel_of(in.M, n)), R);
      EXPECT_NEAR(G(i, n), ref, 1e-11 * std::max(1.0, std::abs(ref)));
    }
  }
}

TEST(GradK, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto in = random_instance(20 + s);
    const Plane R = masked_residual(in.scene, in.X, synthesize_artifact(in.D, in.K, in.M));
    const Eigen::MatrixXd G = grad_K(in.D, in.M, R);
    Eigen::MatrixXd K = in.K, fd(K.rows(), K.cols());
    for (Eigen::Index k = 0; k < K.size(); ++k) {
      fd.data()[k] = oracle::central_diff([&] { return g_of(in, K, in.M); }, K.data()[k], 1e-6);
    }
    EXPECT_LT((fd - G).norm() / G.norm(), 1e-6);
  }
}

TEST(GradM, ZeroResidual) {
  auto in = random_instance(30);
  const CodeTensor G = grad_M(in.D, in.K, Plane::Zero(10, 10));
  for (double v : G.data()) EXPECT_EQ(v, 0.0);
}

TEST(GradM, DeltaFiltersGiveScaledCopies) {
  oracle::Rng rng(31);
  Dictionary D(3, 1);
  D.at(1, 1, 0) = 1.0;
  const Eigen::MatrixXd K = Eigen::MatrixXd::Ones(1, 3);
  const Plane R = rng.plane(5, 6);
  const CodeTensor G = grad_M(D, K, R);
  for (int n = 0; n < 3; ++n) EXPECT_LT((Plane(G.channel(n)) - 2.0 * R).abs().maxCoeff(), 1e-15);
}

TEST(GradM, MatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto in = random_instance(40 + s, 7, 6);
    const Plane R = masked_residual(in.scene, in.X, synthesize_artifact(in.D, in.K, in.M));
    const CodeTensor G = grad_M(in.D, in.K, R);
    CodeTensor M = in.M;
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < M.data().size(); ++k) {
      const double fd = oracle::central_diff([&] { return g_of(in, in.K, M); }, M.data()[k], 1e-6);
      num += (fd - G.data()[k]) * (fd - G.data()[k]);
      den += G.data()[k] * G.data()[k];
    }
    EXPECT_LT(std::sqrt(num / den), 1e-6);
  }
}

TEST(GradM, NoSignalFromMetal) {
  auto in = random_instance(50);
  in.scene.I.setZero();
  const Plane R = masked_residual(in.scene, in.X, synthesize_artifact(in.D, in.K, in.M));
  EXPECT_EQ(grad_K(in.D, in.M, R).cwiseAbs().maxCoeff(), 0.0);
  const CodeTensor G = grad_M(in.D, in.K, R);
  for (double v : G.data()) EXPECT_EQ(v, 0.0);
}

TEST(HalfStepK, Examples) {
  oracle::Rng rng(60);
  const Eigen::MatrixXd K = rng.matrix(4, 2), G = rng.matrix(4, 2);
  EXPECT_EQ(half_step_K(K, Eigen::MatrixXd::Zero(4, 2), 0.3), K);
  EXPECT_EQ(half_step_K(K, G, 0.0), K);
  EXPECT_LT((half_step_K(Eigen::MatrixXd::Zero(4, 2), G, 1.0) + G).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(HalfStepM, Examples) {
  oracle::Rng rng(61);
  const CodeTensor M = rng.stack(4, 5, 2), G = rng.stack(4, 5, 2);
  const CodeTensor same = half_step_M(M, CodeTensor(4, 5, 2), 0.7);
  const CodeTensor same2 = half_step_M(M, G, 0.0);
  const CodeTensor stepped = half_step_M(M, G, 0.3);
  for (std::size_t i = 0; i < M.data().size(); ++i) {
    EXPECT_EQ(same.data()[i], M.data()[i]);
    EXPECT_EQ(same2.data()[i], M.data()[i]);
    EXPECT_NEAR(stepped.data()[i], M.data()[i] - 0.3 * G.data()[i], 1e-15);
  }
}

TEST(HalfStepX, FullStepGivesYMinusA) {
  oracle::Rng rng(62);
  MaskedScene sc;
  sc.Y = rng.plane(5, 5);
  sc.I = Plane::Ones(5, 5);
  const Plane X = rng.plane(5, 5), A = rng.plane(5, 5);
  EXPECT_LT((half_step_X(sc, X, A, 1.0) - (sc.Y - A)).abs().maxCoeff(), 1e-15);
}

TEST(HalfStepX, MetalFrozen) {
  oracle::Rng rng(63);
  MaskedScene sc;
  sc.Y = rng.plane(5, 5);
  sc.I = Plane::Zero(5, 5);
  const Plane X = rng.plane(5, 5);
  EXPECT_TRUE((half_step_X(sc, X, rng.plane(5, 5), 0.7) == X).all());
}

TEST(HalfStepX, SinglePixelArithmetic) {
  MaskedScene sc;
  sc.Y = Plane::Constant(1, 1, 1.0);
  sc.I = Plane::Ones(1, 1);
  const Plane out = half_step_X(sc, Plane::Constant(1, 1, 0.4), Plane::Constant(1, 1, 0.2), 0.5);
  EXPECT_NEAR(out(0, 0), 0.6, 1e-15);
}

TEST(Fidelity, Examples) {
  oracle::Rng rng(64);
  MaskedScene sc;
  const Plane X = rng.plane(6, 6), A = rng.plane(6, 6);
  sc.Y = X + A;
  sc.I = Plane::Ones(6, 6);
  EXPECT_LT(fidelity(sc, X, A), 1e-28);
  sc.Y = rng.plane(6, 6);
  sc.I = Plane::Zero(6, 6);
  EXPECT_EQ(fidelity(sc, X, A), 0.0);
  sc.I = rng.mask(6, 6, 0.3);
  double ref = 0.0;
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) {
      const double r = sc.I(y, x) * (sc.Y(y, x) - X(y, x) - A(y, x));
      ref += r * r;
    }
  }
  EXPECT_NEAR(fidelity(sc, X, A), ref, 1e-12);
  EXPECT_GE(fidelity(sc, X, A), 0.0);
}

TEST(BankSpectralPeak, DeltaFilters) {
  Dictionary D(3, 4);
  for (int i = 0; i < 4; ++i) D.at(1, 1, i) = 1.0;
  EXPECT_NEAR(bank_spectral_peak(D), 4.0, 1e-12);
}

TEST(BankSpectralPeak, BoundsTheBankOperator) {
  // Power iteration on M -> conv_bank_sum(D, M) must stay below the peak.
  oracle::Rng rng(65);
  const Dictionary D = rng.bank(5, 6);
  const double S = bank_spectral_peak(D);
  CodeTensor M = rng.stack(24, 24, 6);
  double lambda = 0.0;
  for (int it = 0; it < 200; ++it) {
    CodeTensor Z = conv_transpose_bank(D, conv_bank_sum(D, M));
    double nz = 0.0, nm = 0.0;
    for (std::size_t k = 0; k < Z.data().size(); ++k) {
      nz += Z.data()[k] * Z.data()[k];
      nm += M.data()[k] * M.data()[k];
    }
    lambda = std::sqrt(nz / nm);
    for (std::size_t k = 0; k < Z.data().size(); ++k) M.data()[k] = Z.data()[k] / std::sqrt(nz);
  }
  EXPECT_LE(lambda, S * 1.001);
  EXPECT_GT(lambda, 0.8 * S);
}
