#pragma once

// Classical proximal-gradient solver for the weighted convolutional dictionary
// model: alternating K / M / X updates with analytic proximal maps
// (unit-column projection, soft threshold, box clamp).

#include <array>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "acdmar/wcd_model.hpp"

namespace acdmar {

enum class UpdateStep { K, M, X };

using UpdateOrder = std::array<UpdateStep, 3>;

// Parses strings such as "KMX" or "XMK"; throws ConfigError otherwise.
UpdateOrder parse_update_order(const std::string& text);
std::string to_string(const UpdateOrder& order);

struct ClassicalProxConfig {
  double lambda_M = 0.0;  // fused soft-threshold level (beta * eta2)
  std::optional<std::pair<double, double>> x_clamp;
  StepSizes steps;
  int max_iters = 50;
  double tol = 1e-8;
  UpdateOrder update_order{UpdateStep::K, UpdateStep::M, UpdateStep::X};

  void validate() const;
};

struct TraceRow {
  int iteration = 0;
  double fidelity = 0.0;
  double l1 = 0.0;
  double total = 0.0;
};

struct SolverState {
  WeightMatrix K;
  CodeTensor M;
  Plane X;
  std::vector<double> objective_trace;
  std::vector<TraceRow> trace_rows;
  int iters_run = 0;
  int degenerate_columns = 0;  // prox_K substitutions over the whole run
};

struct ProxKResult {
  WeightMatrix K;
  std::vector<int> degenerate_columns;
};

inline constexpr double kProxKEpsilon = 1e-12;

// Column-wise projection onto the unit sphere. A column with norm below
// kProxKEpsilon becomes e_1 and its index is reported.
ProxKResult prox_K(const Eigen::MatrixXd& K_half);

CodeTensor prox_M(const CodeTensor& M_half, double lambda_M);

Plane prox_X(const Plane& X_half, const ClassicalProxConfig& cfg);

// Objective tracked by the solver: fidelity + (lambda_M / eta2) ||M||_1.
TraceRow solver_objective(const MaskedScene& scene, const Dictionary& D, const WeightMatrix& K,
                          const CodeTensor& M, const Plane& X, const ClassicalProxConfig& cfg);

// Runs Gauss-Seidel sweeps in cfg.update_order until max_iters or until the
// objective decreases by less than cfg.tol. Throws DivergenceError on NaN.
SolverState run_solver(const MaskedScene& scene, const Dictionary& D, SolverState init,
                       const ClassicalProxConfig& cfg);

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows);

}  // namespace acdmar
