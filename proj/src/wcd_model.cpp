#include "acdmar/wcd_model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "acdmar/error.hpp"

namespace acdmar {
namespace {

void require_same_shape(const Plane& a, const Plane& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch");
  }
}

}  // namespace

void MaskedScene::validate() const {
  require_same_shape(Y, I, "MaskedScene I");
  if (X_gt) require_same_shape(Y, *X_gt, "MaskedScene X_gt");
  if (X_li) require_same_shape(Y, *X_li, "MaskedScene X_li");
  if (!((I == 0.0) || (I == 1.0)).all()) {
    throw Error("MaskedScene: non-metal mask must be exactly binary");
  }
}

Plane synthesize_artifact(const Dictionary& D, const WeightMatrix& K, const CodeTensor& M) {
  return conv_bank_sum(weighted_combine(D, K), M);
}

Plane masked_residual(const MaskedScene& scene, const Plane& X, const Plane& A) {
  require_same_shape(scene.Y, X, "masked_residual X");
  require_same_shape(scene.Y, A, "masked_residual A");
  return scene.I * (A + X - scene.Y);
}

Eigen::MatrixXd grad_K(const Dictionary& D, const CodeTensor& M, const Plane& R) {
  const Eigen::Index hw = R.size();
  const Eigen::Map<const Eigen::VectorXd> r(R.data(), hw);
  Eigen::MatrixXd g(D.count(), M.channels());
  for (int n = 0; n < M.channels(); ++n) {
    const Plane Mn = M.channel(n);
    g.col(n) = 2.0 * (mode3_unfold(depthwise_conv(D, Mn)) * r);
  }
  return g;
}

CodeTensor grad_M(const Dictionary& D, const WeightMatrix& K, const Plane& R) {
  CodeTensor g = conv_transpose_bank(weighted_combine(D, K), R);
  for (double& v : g.data()) v *= 2.0;
  return g;
}

Eigen::MatrixXd half_step_K(const WeightMatrix& K, const Eigen::MatrixXd& grad, double eta1) {
  if (K.rows() != grad.rows() || K.cols() != grad.cols()) {
    throw DimensionError("half_step_K: shape mismatch");
  }
  return K - eta1 * grad;
}

CodeTensor half_step_M(const CodeTensor& M, const CodeTensor& grad, double eta2) {
  if (M.height() != grad.height() || M.width() != grad.width() ||
      M.channels() != grad.channels()) {
    throw DimensionError("half_step_M: shape mismatch");
  }
  CodeTensor out = M;
  auto o = out.data();
  auto g = grad.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= eta2 * g[i];
  return out;
}

Plane half_step_X(const MaskedScene& scene, const Plane& X, const Plane& A, double eta3) {
  require_same_shape(scene.Y, X, "half_step_X X");
  require_same_shape(scene.Y, A, "half_step_X A");
  return (1.0 - eta3 * scene.I) * X + eta3 * scene.I * (scene.Y - A);
}

double fidelity(const MaskedScene& scene, const Plane& X, const Plane& A) {
  return masked_residual(scene, X, A).square().sum();
}

double bank_spectral_peak(const Dictionary& D, int grid) {
  if (grid < D.size()) throw DimensionError("bank_spectral_peak: grid smaller than the filters");
  const int p = D.size();
  const double w0 = 2.0 * std::numbers::pi / grid;
  std::vector<double> cs(static_cast<std::size_t>(grid)), sn(cs.size());
  for (int k = 0; k < grid; ++k) {
    cs[k] = std::cos(w0 * k);
    sn[k] = std::sin(w0 * k);
  }
  double peak = 0.0;
  for (int a = 0; a < grid; ++a) {
    for (int c = 0; c < grid; ++c) {
      double total = 0.0;
      for (int i = 0; i < D.count(); ++i) {
        double re = 0.0, im = 0.0;
        for (int u = 0; u < p; ++u) {
          for (int v = 0; v < p; ++v) {
            const int k = (a * u + c * v) % grid;
            re += D.at(u, v, i) * cs[k];
            im -= D.at(u, v, i) * sn[k];
          }
        }
        total += re * re + im * im;
      }
      peak = std::max(peak, total);
    }
  }
  return peak;
}

}  // namespace acdmar
