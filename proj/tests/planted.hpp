#pragma once

// Planted sparse-artifact instances and the test-only step certifier.

#include <cmath>

#include "acdmar/pg_solver.hpp"
#include "oracles.hpp"

namespace oracle {

struct Planted {
  acdmar::Dictionary D;
  Eigen::MatrixXd K_star;
  acdmar::CodeTensor M_star;
  acdmar::MaskedScene scene;
};

// Smooth X_gt, a metal disk in I, unit-norm K*, M* with ~density nonzeros.
inline Planted make_planted(std::uint64_t seed, int H = 16, int W = 16, int p = 3, int d = 4, int N = 2,
                            double density = 0.05) {
  Rng rng(seed);
  Planted pl;
  pl.D = rng.bank(p, d);
  pl.K_star = rng.matrix(d, N);
  for (int n = 0; n < N; ++n) pl.K_star.col(n).normalize();
  pl.M_star = acdmar::CodeTensor(H, W, N);
  for (double& v : pl.M_star.data()) v = rng.uniform() < density ? rng.normal() : 0.0;

  Plane X(H, W);
  const double fy = rng.uniform(0.5, 2.0), fx = rng.uniform(0.5, 2.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) X(y, x) = 0.5 + 0.3 * std::sin(fy * y / H * 6.28) * std::cos(fx * x / W * 6.28);
  }
  Plane I = Plane::Ones(H, W);
  const double cy = H / 2.0, cx = W / 2.0, r = std::max(1.5, H / 8.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) I(y, x) = 0.0;
    }
  }
  pl.scene.X_gt = X;
  pl.scene.I = I;
  pl.scene.Y = X + synthesize(pl.D, pl.K_star, pl.M_star);
  return pl;
}

// Starting point: random unit K, zero codes, X at the ground truth.
inline acdmar::SolverState planted_init(const Planted& pl, std::uint64_t seed) {
  Rng rng(seed);
  acdmar::SolverState st;
  st.K = rng.matrix(pl.D.count(), pl.M_star.channels());
  for (int n = 0; n < st.K.cols(); ++n) st.K.col(n).normalize();
  st.M = acdmar::CodeTensor(pl.M_star.height(), pl.M_star.width(), pl.M_star.channels());
  st.X = *pl.scene.X_gt;
  return st;
}

inline bool non_increasing(const std::vector<double>& t, double slack) {
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[i - 1] + slack) return false;
  }
  return true;
}

// Halves all step sizes from `start` until the full run is monotone.
// Returns the certified steps, or zeros when nothing below 1e-6 works.
inline acdmar::StepSizes certify_steps(const Planted& pl, const acdmar::SolverState& init,
                                       acdmar::ClassicalProxConfig cfg, acdmar::StepSizes start,
                                       double slack = 1e-9) {
  acdmar::StepSizes s = start;
  while (s.eta1 > 1e-6) {
    cfg.steps = s;
    const auto out = acdmar::run_solver(pl.scene, pl.D, init, cfg);
    if (non_increasing(out.objective_trace, slack)) return s;
    s.eta1 *= 0.5;
    s.eta2 *= 0.5;
    s.eta3 *= 0.5;
  }
  return {0.0, 0.0, 0.0};
}

inline double col_norm_dev(const Eigen::MatrixXd& K) {
  double dev = 0.0;
  for (int n = 0; n < K.cols(); ++n) dev = std::max(dev, std::abs(K.col(n).norm() - 1.0));
  return dev;
}

}  // namespace oracle
