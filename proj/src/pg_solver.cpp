#include "acdmar/pg_solver.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

#include "acdmar/error.hpp"

namespace acdmar {
namespace {

const char* step_name(UpdateStep s) {
  switch (s) {
    case UpdateStep::K: return "K";
    case UpdateStep::M: return "M";
    case UpdateStep::X: return "X";
  }
  return "?";
}

void check_finite(std::span<const double> v, UpdateStep s, int iter) {
  if (!all_finite(v)) {
    throw DivergenceError(std::string("non-finite value in ") + step_name(s) +
                          "-update at iteration " + std::to_string(iter));
  }
}

}  // namespace

UpdateOrder parse_update_order(const std::string& text) {
  if (text.size() != 3) throw ConfigError("update_order must be a permutation of KMX: " + text);
  UpdateOrder order{};
  bool seen[3] = {false, false, false};
  for (std::size_t i = 0; i < 3; ++i) {
    int idx = -1;
    switch (text[i]) {
      case 'K': case 'k': idx = 0; break;
      case 'M': case 'm': idx = 1; break;
      case 'X': case 'x': idx = 2; break;
      default: break;
    }
    if (idx < 0 || seen[idx]) {
      throw ConfigError("update_order must be a permutation of KMX: " + text);
    }
    seen[idx] = true;
    order[i] = static_cast<UpdateStep>(idx);
  }
  return order;
}

std::string to_string(const UpdateOrder& order) {
  std::string s;
  for (UpdateStep st : order) s += step_name(st);
  return s;
}

void ClassicalProxConfig::validate() const {
  if (lambda_M < 0) throw ConfigError("lambda_M must be non-negative");
  if (x_clamp && !(x_clamp->first < x_clamp->second)) {
    throw ConfigError("x_clamp requires lo < hi");
  }
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (tol < 0) throw ConfigError("tol must be non-negative");
  if (!(steps.eta1 > 0 && steps.eta2 > 0 && steps.eta3 > 0)) {
    throw ConfigError("step sizes must be positive");
  }
}

ProxKResult prox_K(const Eigen::MatrixXd& K_half) {
  ProxKResult res{K_half, {}};
  for (Eigen::Index n = 0; n < K_half.cols(); ++n) {
    const double norm = K_half.col(n).norm();
    if (norm < kProxKEpsilon) {
      res.K.col(n).setZero();
      res.K(0, n) = 1.0;
      res.degenerate_columns.push_back(static_cast<int>(n));
    } else {
      res.K.col(n) /= norm;
    }
  }
  return res;
}

CodeTensor prox_M(const CodeTensor& M_half, double lambda_M) {
  CodeTensor out = M_half;
  for (double& v : out.data()) {
    const double mag = std::abs(v) - lambda_M;
    if (!std::isnan(v)) v = mag > 0 ? std::copysign(mag, v) : 0.0;  // NaN must reach the divergence check
  }
  return out;
}

Plane prox_X(const Plane& X_half, const ClassicalProxConfig& cfg) {
  if (!cfg.x_clamp) return X_half;
  return X_half.max(cfg.x_clamp->first).min(cfg.x_clamp->second);
}

TraceRow solver_objective(const MaskedScene& scene, const Dictionary& D, const WeightMatrix& K,
                          const CodeTensor& M, const Plane& X, const ClassicalProxConfig& cfg) {
  TraceRow row;
  row.fidelity = fidelity(scene, X, synthesize_artifact(D, K, M));
  double l1 = 0.0;
  for (double v : M.data()) l1 += std::abs(v);
  row.l1 = (cfg.lambda_M / cfg.steps.eta2) * l1;
  row.total = row.fidelity + row.l1;
  return row;
}

SolverState run_solver(const MaskedScene& scene, const Dictionary& D, SolverState init,
                       const ClassicalProxConfig& cfg) {
  cfg.validate();
  scene.validate();
  SolverState st = std::move(init);
  if (st.K.rows() != D.count() || st.K.cols() != st.M.channels()) {
    throw DimensionError("run_solver: K must be d x N matching D and M");
  }
  if (st.X.rows() != scene.Y.rows() || st.X.cols() != scene.Y.cols() ||
      st.M.height() != scene.height() || st.M.width() != scene.width()) {
    throw DimensionError("run_solver: X and M must match the scene shape");
  }
  st.objective_trace.clear();
  st.trace_rows.clear();
  st.iters_run = 0;

  TraceRow row = solver_objective(scene, D, st.K, st.M, st.X, cfg);
  st.trace_rows.push_back(row);
  st.objective_trace.push_back(row.total);

  for (int it = 1; it <= cfg.max_iters; ++it) {
    for (UpdateStep s : cfg.update_order) {
      switch (s) {
        case UpdateStep::K: {
          const Plane R = masked_residual(scene, st.X, synthesize_artifact(D, st.K, st.M));
          auto res = prox_K(half_step_K(st.K, grad_K(D, st.M, R), cfg.steps.eta1));
          st.degenerate_columns += static_cast<int>(res.degenerate_columns.size());
          st.K = std::move(res.K);
          check_finite({st.K.data(), static_cast<std::size_t>(st.K.size())}, s, it);
          break;
        }
        case UpdateStep::M: {
          const Plane R = masked_residual(scene, st.X, synthesize_artifact(D, st.K, st.M));
          st.M = prox_M(half_step_M(st.M, grad_M(D, st.K, R), cfg.steps.eta2), cfg.lambda_M);
          check_finite(st.M.data(), s, it);
          break;
        }
        case UpdateStep::X: {
          const Plane A = synthesize_artifact(D, st.K, st.M);
          st.X = prox_X(half_step_X(scene, st.X, A, cfg.steps.eta3), cfg);
          check_finite({st.X.data(), static_cast<std::size_t>(st.X.size())}, s, it);
          break;
        }
      }
    }
    row = solver_objective(scene, D, st.K, st.M, st.X, cfg);
    row.iteration = it;
    st.trace_rows.push_back(row);
    st.objective_trace.push_back(row.total);
    st.iters_run = it;
    if (!std::isfinite(row.total)) {
      throw DivergenceError("non-finite objective at iteration " + std::to_string(it));
    }
    const double prev = st.objective_trace[st.objective_trace.size() - 2];
    if (std::abs(prev - row.total) < cfg.tol) break;
  }
  return st;
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write trace file " + path.string());
  os << "iteration,fidelity,l1,total\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.fidelity << ',' << r.l1 << ',' << r.total << '\n';
  }
}

}  // namespace acdmar
