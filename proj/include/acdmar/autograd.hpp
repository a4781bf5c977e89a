#pragma once

// Minimal reverse-mode differentiation over dense double tensors.
//
// A Var is a node in a dynamically built graph. Leaves created with
// `leaf(..., true)` accumulate gradients; everything else is derived.
// Graphs are freed when the last Var referencing them goes away.
//
// Layout conventions used by the ops below:
//   images   [B, C, H, W]
//   weights  [B, d, N]      per-sample mixing matrices
//   dict     [d, p, p]
//   banks    [B, Co, Ci, k, k]  per-sample convolution weights
//   scalars  [1]

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace acdmar::ad {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> d);

  [[nodiscard]] std::size_t numel() const { return data.size(); }
  [[nodiscard]] int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] int ndim() const { return static_cast<int>(shape.size()); }
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer();
  [[nodiscard]] const std::vector<int>& shape() const { return value.shape; }
};

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);
Var scalar(double v);

// Runs reverse accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);

// ---- elementwise ------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
// x * s where s is a [1] tensor.
Var scale_by(const Var& x, const Var& s);
Var relu(const Var& x);
Var softplus(const Var& x);

// ---- reductions (output [1]) -----------------------------------------------
Var sum_square(const Var& x);
Var sum_abs(const Var& x);

// ---- channel manipulation on [B, C, H, W] -----------------------------------
Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int begin, int end);

// ---- convolutions -----------------------------------------------------------
// Shared weights w [Co, Ci, k, k], optional bias [Co] (pass nullptr for none).
Var conv2d(const Var& x, const Var& w, const Var& bias);
// Per-sample weights w [B, Co, Ci, k, k]: x [B, Ci, H, W] -> [B, Co, H, W].
Var conv_per_sample(const Var& x, const Var& w);
// Adjoint of conv_per_sample in x: r [B, Co, H, W] -> [B, Ci, H, W].
Var conv_transpose_per_sample(const Var& r, const Var& w);
// d<r, conv_per_sample(x, w)>/dw: x [B, Ci, H, W], r [B, Co, H, W] -> [B, Co, Ci, k, k].
Var conv_weight_grad(const Var& x, const Var& r, int ksize);

// ---- dictionary / mixing ----------------------------------------------------
// filters[b, 0, n] = sum_i dict[i] * K[b, i, n]  -> [B, 1, N, p, p]
Var combine_filters(const Var& dict, const Var& K);
// dict [d, p, p] -> [B, 1, d, p, p]
Var broadcast_dict(const Var& dict, int batch);
// out[b, i, n] = <dict[i], bank[b, 0, n]>  -> [B, d, N]
Var project_on_dict(const Var& dict, const Var& bank);

// ---- dense layers on [B, d, N] (acting on each column) ------------------------
Var linear_columns(const Var& x, const Var& w, const Var& bias);
Var normalize_columns(const Var& x, double eps = 1e-12);

// ---- batch normalization on [B, C, H, W] -------------------------------------
struct BatchNormState {
  std::vector<double>* running_mean = nullptr;
  std::vector<double>* running_var = nullptr;
  double* tracked = nullptr;  // > 0 once running stats have been recorded
  double momentum = 0.1;
  double eps = 1e-5;
};

// Train mode normalizes with batch statistics and updates the running
// stats; eval mode uses the running stats, or identity normalization when
// none were ever recorded (then *fallback_used is set).
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState state,
               bool train, bool* fallback_used = nullptr);

}  // namespace acdmar::ad
