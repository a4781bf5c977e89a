#pragma once

// Weighted convolutional dictionary artifact model A = (D * K) (x) M and the
// gradient / half-step updates shared by the classical solver and the
// unrolled network.
//
// Gradient convention: the data term is g = ||I . (Y - X - A)||_F^2 (no 1/2),
// so grad_K and grad_M carry the factor 2. The X half-step uses the blend
// X <- (1 - eta3 I) . X + eta3 I . (Y - A) verbatim.

#include <optional>

#include "acdmar/tensor_ops.hpp"

namespace acdmar {

using Dictionary = FilterBank;
using CodeTensor = Stack3;

struct MaskedScene {
  Plane Y;                     // observed, normalized intensities
  Plane I;                     // 1 on non-metal pixels, 0 on metal
  std::optional<Plane> X_gt;   // ground truth when known
  std::optional<Plane> X_li;   // LI-restored image used for initialization

  [[nodiscard]] int height() const { return static_cast<int>(Y.rows()); }
  [[nodiscard]] int width() const { return static_cast<int>(Y.cols()); }

  // Throws DimensionError on shape mismatch and Error if I is not binary.
  void validate() const;
};

struct StepSizes {
  double eta1 = 0.5;
  double eta2 = 0.5;
  double eta3 = 0.5;
};

Plane synthesize_artifact(const Dictionary& D, const WeightMatrix& K, const CodeTensor& M);

// R = I . (A + X - Y)
Plane masked_residual(const MaskedScene& scene, const Plane& X, const Plane& A);

// Entry (i, n) = 2 <conv(D_i, M_n), R>, assembled column by column from the
// depth-wise convolution D (x)^d M_n unfolded along the channel mode.
Eigen::MatrixXd grad_K(const Dictionary& D, const CodeTensor& M, const Plane& R);

// 2 (D * K)^T (x) R
CodeTensor grad_M(const Dictionary& D, const WeightMatrix& K, const Plane& R);

Eigen::MatrixXd half_step_K(const WeightMatrix& K, const Eigen::MatrixXd& grad, double eta1);
CodeTensor half_step_M(const CodeTensor& M, const CodeTensor& grad, double eta2);
Plane half_step_X(const MaskedScene& scene, const Plane& X, const Plane& A, double eta3);

// max over a grid x grid frequency lattice of sum_i |DFT(D_i)|^2. Twice this
// bounds the Lipschitz constant of the data term in M for a bank used without
// weighting; for a unit-column K the bound picks up a factor N.
double bank_spectral_peak(const Dictionary& D, int grid = 64);

// ||I . (Y - X - A)||_F^2
double fidelity(const MaskedScene& scene, const Plane& X, const Plane& A);

}  // namespace acdmar
