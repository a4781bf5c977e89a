#include "acdmar/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "acdmar/conv_kernels.hpp"
#include "acdmar/error.hpp"

namespace acdmar::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in->requires_grad;
  if (n->requires_grad) {
    n->inputs = std::move(inputs);
    n->backward_fn = std::move(fn);
  }
  return n;
}

void require_shape(const Var& a, const Var& b, const char* op) {
  if (a->shape() != b->shape()) {
    throw DimensionError(std::string(op) + ": shape " + shape_string(a->shape()) + " vs " +
                         shape_string(b->shape()));
  }
}

void require_ndim(const Var& a, int n, const char* op) {
  if (a->value.ndim() != n) {
    throw DimensionError(std::string(op) + ": expected " + std::to_string(n) + "-d tensor, got " +
                         shape_string(a->shape()));
  }
}

std::span<double> sub_span(std::vector<double>& v, std::size_t off, std::size_t n) {
  return {v.data() + off, n};
}

}  // namespace

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (data.size() != shape_numel(shape)) throw DimensionError("Tensor: data size does not match shape");
}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.numel(), 0.0);
  return grad;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var constant(Tensor value) { return leaf(std::move(value), false); }

Var scalar(double v) { return constant(Tensor({1}, std::vector<double>{v})); }

void backward(const Var& root) {
  if (root->value.numel() != 1) throw DimensionError("backward: root must be a scalar");
  if (!root->requires_grad) return;
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_shape(a, b, "add");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_shape(a, b, "sub");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= b->value.data[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_shape(a, b, "mul");
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= b->value.data[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value.data;
    const auto& bv = self.inputs[1]->value.data;
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.inputs[1]->requires_grad) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& x, double c) {
  Tensor out = x->value;
  for (double& v : out.data) v *= c;
  return make(std::move(out), {x}, [c](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

Var scale_by(const Var& x, const Var& s) {
  if (s->value.numel() != 1) throw DimensionError("scale_by: scale must have one element");
  const double c = s->value.data[0];
  Tensor out = x->value;
  for (double& v : out.data) v *= c;
  return make(std::move(out), {x, s}, [](Node& self) {
    const double c = self.inputs[1]->value.data[0];
    if (self.inputs[0]->requires_grad) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    }
    if (self.inputs[1]->requires_grad) {
      const auto& xv = self.inputs[0]->value.data;
      double acc = 0.0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += self.grad[i] * xv[i];
      self.inputs[1]->grad_buffer()[0] += acc;
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.data) v = v > 0 ? v : 0.0;
  return make(std::move(out), {x}, [](Node& self) {
    const auto& xv = self.inputs[0]->value.data;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0) g[i] += self.grad[i];
    }
  });
}

Var softplus(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.data) v = v > 30 ? v : std::log1p(std::exp(v));
  return make(std::move(out), {x}, [](Node& self) {
    const auto& xv = self.inputs[0]->value.data;
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / (1.0 + std::exp(-xv[i]));
  });
}

// ---- reductions -------------------------------------------------------------

Var sum_square(const Var& x) {
  double s = 0.0;
  for (double v : x->value.data) s += v * v;
  return make(Tensor({1}, std::vector<double>{s}), {x}, [](Node& self) {
    const auto& xv = self.inputs[0]->value.data;
    auto& g = self.inputs[0]->grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * up * xv[i];
  });
}

Var sum_abs(const Var& x) {
  double s = 0.0;
  for (double v : x->value.data) s += std::abs(v);
  return make(Tensor({1}, std::vector<double>{s}), {x}, [](Node& self) {
    const auto& xv = self.inputs[0]->value.data;
    auto& g = self.inputs[0]->grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0) g[i] += up;
      else if (xv[i] < 0) g[i] -= up;
    }
  });
}

// ---- channels ---------------------------------------------------------------

Var concat_channels(const Var& a, const Var& b) {
  require_ndim(a, 4, "concat_channels");
  require_ndim(b, 4, "concat_channels");
  const int B = a->value.dim(0), Ca = a->value.dim(1), Cb = b->value.dim(1);
  const int H = a->value.dim(2), W = a->value.dim(3);
  if (b->value.dim(0) != B || b->value.dim(2) != H || b->value.dim(3) != W) {
    throw DimensionError("concat_channels: batch/spatial mismatch");
  }
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({B, Ca + Cb, H, W});
  for (int n = 0; n < B; ++n) {
    std::copy_n(a->value.data.begin() + n * Ca * hw, Ca * hw, out.data.begin() + n * (Ca + Cb) * hw);
    std::copy_n(b->value.data.begin() + n * Cb * hw, Cb * hw,
                out.data.begin() + (n * (Ca + Cb) + Ca) * hw);
  }
  return make(std::move(out), {a, b}, [B, Ca, Cb, hw](Node& self) {
    for (int n = 0; n < B; ++n) {
      const double* src = self.grad.data() + n * (Ca + Cb) * hw;
      if (self.inputs[0]->requires_grad) {
        double* g = self.inputs[0]->grad_buffer().data() + n * Ca * hw;
        for (std::size_t i = 0; i < Ca * hw; ++i) g[i] += src[i];
      }
      if (self.inputs[1]->requires_grad) {
        double* g = self.inputs[1]->grad_buffer().data() + n * Cb * hw;
        for (std::size_t i = 0; i < Cb * hw; ++i) g[i] += src[Ca * hw + i];
      }
    }
  });
}

Var slice_channels(const Var& x, int begin, int end) {
  require_ndim(x, 4, "slice_channels");
  const int B = x->value.dim(0), C = x->value.dim(1), H = x->value.dim(2), W = x->value.dim(3);
  if (begin < 0 || end > C || begin >= end) throw DimensionError("slice_channels: bad range");
  const int Co = end - begin;
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Tensor out({B, Co, H, W});
  for (int n = 0; n < B; ++n) {
    std::copy_n(x->value.data.begin() + (n * C + begin) * hw, Co * hw, out.data.begin() + n * Co * hw);
  }
  return make(std::move(out), {x}, [B, C, Co, begin, hw](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < B; ++n) {
      const double* src = self.grad.data() + n * Co * hw;
      double* dst = g.data() + (n * C + begin) * hw;
      for (std::size_t i = 0; i < Co * hw; ++i) dst[i] += src[i];
    }
  });
}

// ---- convolutions -----------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& bias) {
  require_ndim(x, 4, "conv2d x");
  require_ndim(w, 4, "conv2d w");
  const int B = x->value.dim(0);
  kernels::ConvShape s{x->value.dim(1), w->value.dim(0), x->value.dim(2), x->value.dim(3),
                       w->value.dim(2)};
  if (w->value.dim(1) != s.in_channels || w->value.dim(3) != s.ksize) {
    throw DimensionError("conv2d: weight " + shape_string(w->shape()) + " vs input " +
                         shape_string(x->shape()));
  }
  if (bias && bias->value.numel() != static_cast<std::size_t>(s.out_channels)) {
    throw DimensionError("conv2d: bias size mismatch");
  }
  Tensor out({B, s.out_channels, s.height, s.width});
  const std::size_t hw = static_cast<std::size_t>(s.height) * s.width;
  for (int n = 0; n < B; ++n) {
    auto o = sub_span(out.data, n * s.out_size(), s.out_size());
    if (bias) {
      for (int c = 0; c < s.out_channels; ++c) {
        std::fill_n(o.begin() + c * hw, hw, bias->value.data[c]);
      }
    }
    kernels::conv_forward(s, sub_span(x->value.data, n * s.in_size(), s.in_size()), w->value.data, o);
  }
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(bias);
  return make(std::move(out), std::move(inputs), [s, B, hw](Node& self) {
    const Var& xin = self.inputs[0];
    const Var& win = self.inputs[1];
    for (int n = 0; n < B; ++n) {
      auto go = sub_span(self.grad, n * s.out_size(), s.out_size());
      if (xin->requires_grad) {
        kernels::conv_backward_input(s, go, win->value.data,
                                     sub_span(xin->grad_buffer(), n * s.in_size(), s.in_size()));
      }
      if (win->requires_grad) {
        kernels::conv_backward_weight(s, sub_span(xin->value.data, n * s.in_size(), s.in_size()), go,
                                      win->grad_buffer());
      }
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        auto& gb = self.inputs[2]->grad_buffer();
        for (int c = 0; c < s.out_channels; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < hw; ++i) acc += go[c * hw + i];
          gb[c] += acc;
        }
      }
    }
  });
}

namespace {

kernels::ConvShape per_sample_shape(const Var& w, int H, int W) {
  return {w->value.dim(2), w->value.dim(1), H, W, w->value.dim(3)};
}

}  // namespace

Var conv_per_sample(const Var& x, const Var& w) {
  require_ndim(x, 4, "conv_per_sample x");
  require_ndim(w, 5, "conv_per_sample w");
  const int B = x->value.dim(0);
  const auto s = per_sample_shape(w, x->value.dim(2), x->value.dim(3));
  if (w->value.dim(0) != B || s.in_channels != x->value.dim(1)) {
    throw DimensionError("conv_per_sample: weight " + shape_string(w->shape()) + " vs input " +
                         shape_string(x->shape()));
  }
  Tensor out({B, s.out_channels, s.height, s.width});
  for (int n = 0; n < B; ++n) {
    kernels::conv_forward(s, sub_span(x->value.data, n * s.in_size(), s.in_size()),
                          sub_span(w->value.data, n * s.weight_size(), s.weight_size()),
                          sub_span(out.data, n * s.out_size(), s.out_size()));
  }
  return make(std::move(out), {x, w}, [s, B](Node& self) {
    const Var& xin = self.inputs[0];
    const Var& win = self.inputs[1];
    for (int n = 0; n < B; ++n) {
      auto go = sub_span(self.grad, n * s.out_size(), s.out_size());
      auto wn = sub_span(win->value.data, n * s.weight_size(), s.weight_size());
      if (xin->requires_grad) {
        kernels::conv_backward_input(s, go, wn, sub_span(xin->grad_buffer(), n * s.in_size(), s.in_size()));
      }
      if (win->requires_grad) {
        kernels::conv_backward_weight(s, sub_span(xin->value.data, n * s.in_size(), s.in_size()), go,
                                      sub_span(win->grad_buffer(), n * s.weight_size(), s.weight_size()));
      }
    }
  });
}

Var conv_transpose_per_sample(const Var& r, const Var& w) {
  require_ndim(r, 4, "conv_transpose_per_sample r");
  require_ndim(w, 5, "conv_transpose_per_sample w");
  const int B = r->value.dim(0);
  const auto s = per_sample_shape(w, r->value.dim(2), r->value.dim(3));
  if (w->value.dim(0) != B || s.out_channels != r->value.dim(1)) {
    throw DimensionError("conv_transpose_per_sample: weight/input mismatch");
  }
  Tensor out({B, s.in_channels, s.height, s.width});
  for (int n = 0; n < B; ++n) {
    kernels::conv_backward_input(s, sub_span(r->value.data, n * s.out_size(), s.out_size()),
                                 sub_span(w->value.data, n * s.weight_size(), s.weight_size()),
                                 sub_span(out.data, n * s.in_size(), s.in_size()));
  }
  // z = A_w^T r:  dr = A_w dz,  dw = weight_grad(x = dz, dy = r).
  return make(std::move(out), {r, w}, [s, B](Node& self) {
    const Var& rin = self.inputs[0];
    const Var& win = self.inputs[1];
    for (int n = 0; n < B; ++n) {
      auto gz = sub_span(self.grad, n * s.in_size(), s.in_size());
      if (rin->requires_grad) {
        kernels::conv_forward(s, gz, sub_span(win->value.data, n * s.weight_size(), s.weight_size()),
                              sub_span(rin->grad_buffer(), n * s.out_size(), s.out_size()));
      }
      if (win->requires_grad) {
        kernels::conv_backward_weight(s, gz, sub_span(rin->value.data, n * s.out_size(), s.out_size()),
                                      sub_span(win->grad_buffer(), n * s.weight_size(), s.weight_size()));
      }
    }
  });
}

Var conv_weight_grad(const Var& x, const Var& r, int ksize) {
  require_ndim(x, 4, "conv_weight_grad x");
  require_ndim(r, 4, "conv_weight_grad r");
  const int B = x->value.dim(0);
  const kernels::ConvShape s{x->value.dim(1), r->value.dim(1), x->value.dim(2), x->value.dim(3), ksize};
  if (r->value.dim(0) != B || r->value.dim(2) != s.height || r->value.dim(3) != s.width) {
    throw DimensionError("conv_weight_grad: shape mismatch");
  }
  Tensor out({B, s.out_channels, s.in_channels, ksize, ksize});
  for (int n = 0; n < B; ++n) {
    kernels::conv_backward_weight(s, sub_span(x->value.data, n * s.in_size(), s.in_size()),
                                  sub_span(r->value.data, n * s.out_size(), s.out_size()),
                                  sub_span(out.data, n * s.weight_size(), s.weight_size()));
  }
  // <G, Wg(x, r)> = <r, conv(x, G)>:  dr = conv(x, G),  dx = conv^T(r, G).
  return make(std::move(out), {x, r}, [s, B](Node& self) {
    const Var& xin = self.inputs[0];
    const Var& rin = self.inputs[1];
    for (int n = 0; n < B; ++n) {
      auto G = sub_span(self.grad, n * s.weight_size(), s.weight_size());
      if (rin->requires_grad) {
        kernels::conv_forward(s, sub_span(xin->value.data, n * s.in_size(), s.in_size()), G,
                              sub_span(rin->grad_buffer(), n * s.out_size(), s.out_size()));
      }
      if (xin->requires_grad) {
        kernels::conv_backward_input(s, sub_span(rin->value.data, n * s.out_size(), s.out_size()), G,
                                     sub_span(xin->grad_buffer(), n * s.in_size(), s.in_size()));
      }
    }
  });
}

// ---- dictionary / mixing ----------------------------------------------------

Var combine_filters(const Var& dict, const Var& K) {
  require_ndim(dict, 3, "combine_filters dict");
  require_ndim(K, 3, "combine_filters K");
  const int d = dict->value.dim(0), p = dict->value.dim(1);
  const int B = K->value.dim(0), N = K->value.dim(2);
  if (K->value.dim(1) != d) throw DimensionError("combine_filters: K rows must equal dictionary size");
  const int p2 = p * p;
  Tensor out({B, 1, N, p, p});
  const Eigen::Map<const RowMat> D(dict->value.data.data(), d, p2);
  for (int n = 0; n < B; ++n) {
    const Eigen::Map<const RowMat> Kn(K->value.data.data() + n * d * N, d, N);
    Eigen::Map<RowMat> F(out.data.data() + n * N * p2, N, p2);
    F.noalias() = Kn.transpose() * D;
  }
  return make(std::move(out), {dict, K}, [d, p2, B, N](Node& self) {
    const Var& din = self.inputs[0];
    const Var& kin = self.inputs[1];
    const Eigen::Map<const RowMat> D(din->value.data.data(), d, p2);
    for (int n = 0; n < B; ++n) {
      const Eigen::Map<const RowMat> G(self.grad.data() + n * N * p2, N, p2);
      if (kin->requires_grad) {
        Eigen::Map<RowMat> gK(kin->grad_buffer().data() + n * d * N, d, N);
        gK.noalias() += D * G.transpose();
      }
      if (din->requires_grad) {
        const Eigen::Map<const RowMat> Kn(kin->value.data.data() + n * d * N, d, N);
        Eigen::Map<RowMat> gD(din->grad_buffer().data(), d, p2);
        gD.noalias() += Kn * G;
      }
    }
  });
}

Var broadcast_dict(const Var& dict, int batch) {
  require_ndim(dict, 3, "broadcast_dict");
  const int d = dict->value.dim(0), p = dict->value.dim(1);
  const std::size_t sz = dict->value.numel();
  Tensor out({batch, 1, d, p, p});
  for (int n = 0; n < batch; ++n) std::copy(dict->value.data.begin(), dict->value.data.end(), out.data.begin() + n * sz);
  return make(std::move(out), {dict}, [batch, sz](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int n = 0; n < batch; ++n) {
      for (std::size_t i = 0; i < sz; ++i) g[i] += self.grad[n * sz + i];
    }
  });
}

Var project_on_dict(const Var& dict, const Var& bank) {
  require_ndim(dict, 3, "project_on_dict dict");
  require_ndim(bank, 5, "project_on_dict bank");
  const int d = dict->value.dim(0), p = dict->value.dim(1);
  const int B = bank->value.dim(0), N = bank->value.dim(2);
  if (bank->value.dim(1) != 1 || bank->value.dim(3) != p) {
    throw DimensionError("project_on_dict: bank " + shape_string(bank->shape()) + " vs dict " +
                         shape_string(dict->shape()));
  }
  const int p2 = p * p;
  Tensor out({B, d, N});
  const Eigen::Map<const RowMat> D(dict->value.data.data(), d, p2);
  for (int n = 0; n < B; ++n) {
    const Eigen::Map<const RowMat> G(bank->value.data.data() + n * N * p2, N, p2);
    Eigen::Map<RowMat> o(out.data.data() + n * d * N, d, N);
    o.noalias() = D * G.transpose();
  }
  return make(std::move(out), {dict, bank}, [d, p2, B, N](Node& self) {
    const Var& din = self.inputs[0];
    const Var& bin = self.inputs[1];
    const Eigen::Map<const RowMat> D(din->value.data.data(), d, p2);
    for (int n = 0; n < B; ++n) {
      const Eigen::Map<const RowMat> up(self.grad.data() + n * d * N, d, N);
      if (din->requires_grad) {
        const Eigen::Map<const RowMat> G(bin->value.data.data() + n * N * p2, N, p2);
        Eigen::Map<RowMat> gD(din->grad_buffer().data(), d, p2);
        gD.noalias() += up * G;
      }
      if (bin->requires_grad) {
        Eigen::Map<RowMat> gG(bin->grad_buffer().data() + n * N * p2, N, p2);
        gG.noalias() += up.transpose() * D;
      }
    }
  });
}

// ---- dense ------------------------------------------------------------------

Var linear_columns(const Var& x, const Var& w, const Var& bias) {
  require_ndim(x, 3, "linear_columns x");
  const int B = x->value.dim(0), d = x->value.dim(1), N = x->value.dim(2);
  if (w->value.ndim() != 2 || w->value.dim(1) != d) throw DimensionError("linear_columns: weight shape");
  const int dout = w->value.dim(0);
  if (bias->value.numel() != static_cast<std::size_t>(dout)) throw DimensionError("linear_columns: bias shape");
  Tensor out({B, dout, N});
  const Eigen::Map<const RowMat> Wm(w->value.data.data(), dout, d);
  const Eigen::Map<const Eigen::VectorXd> bv(bias->value.data.data(), dout);
  for (int n = 0; n < B; ++n) {
    const Eigen::Map<const RowMat> xn(x->value.data.data() + n * d * N, d, N);
    Eigen::Map<RowMat> o(out.data.data() + n * dout * N, dout, N);
    o.noalias() = Wm * xn;
    o.colwise() += bv;
  }
  return make(std::move(out), {x, w, bias}, [B, d, N, dout](Node& self) {
    const Var& xin = self.inputs[0];
    const Var& win = self.inputs[1];
    const Var& bin = self.inputs[2];
    const Eigen::Map<const RowMat> Wm(win->value.data.data(), dout, d);
    for (int n = 0; n < B; ++n) {
      const Eigen::Map<const RowMat> up(self.grad.data() + n * dout * N, dout, N);
      if (xin->requires_grad) {
        Eigen::Map<RowMat> gx(xin->grad_buffer().data() + n * d * N, d, N);
        gx.noalias() += Wm.transpose() * up;
      }
      if (win->requires_grad) {
        const Eigen::Map<const RowMat> xn(xin->value.data.data() + n * d * N, d, N);
        Eigen::Map<RowMat> gw(win->grad_buffer().data(), dout, d);
        gw.noalias() += up * xn.transpose();
      }
      if (bin->requires_grad) {
        Eigen::Map<Eigen::VectorXd> gb(bin->grad_buffer().data(), dout);
        gb += up.rowwise().sum();
      }
    }
  });
}

Var normalize_columns(const Var& x, double eps) {
  require_ndim(x, 3, "normalize_columns");
  const int B = x->value.dim(0), d = x->value.dim(1), N = x->value.dim(2);
  Tensor out = x->value;
  std::vector<double> norms(static_cast<std::size_t>(B) * N);
  for (int n = 0; n < B; ++n) {
    Eigen::Map<RowMat> o(out.data.data() + n * d * N, d, N);
    for (int c = 0; c < N; ++c) {
      const double nr = std::max(o.col(c).norm(), eps);
      norms[n * N + c] = nr;
      o.col(c) /= nr;
    }
  }
  return make(std::move(out), {x}, [B, d, N, eps, norms = std::move(norms)](Node& self) {
    const Var& xin = self.inputs[0];
    for (int n = 0; n < B; ++n) {
      const Eigen::Map<const RowMat> xn(xin->value.data.data() + n * d * N, d, N);
      const Eigen::Map<const RowMat> up(self.grad.data() + n * d * N, d, N);
      Eigen::Map<RowMat> gx(xin->grad_buffer().data() + n * d * N, d, N);
      for (int c = 0; c < N; ++c) {
        const double nr = norms[n * N + c];
        if (xn.col(c).norm() <= eps) {
          gx.col(c) += up.col(c) / nr;  // clamped branch: y = x / eps
          continue;
        }
        const Eigen::VectorXd y = xn.col(c) / nr;
        gx.col(c) += (up.col(c) - y * y.dot(up.col(c))) / nr;
      }
    }
  });
}

// ---- batch norm -------------------------------------------------------------

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState st, bool train,
               bool* fallback_used) {
  require_ndim(x, 4, "batch_norm");
  const int B = x->value.dim(0), C = x->value.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x->value.dim(2)) * x->value.dim(3);
  if (gamma->value.numel() != static_cast<std::size_t>(C) || beta->value.numel() != static_cast<std::size_t>(C)) {
    throw DimensionError("batch_norm: affine parameter size mismatch");
  }
  const double m = static_cast<double>(B) * hw;
  std::vector<double> mean(C, 0.0), inv_std(C, 1.0);
  bool use_batch = train;
  if (train) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < B; ++n) {
        const double* p = x->value.data.data() + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean[c] = s / m;
      double v = 0.0;
      for (int n = 0; n < B; ++n) {
        const double* p = x->value.data.data() + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mean[c]) * (p[i] - mean[c]);
      }
      const double var = v / m;
      inv_std[c] = 1.0 / std::sqrt(var + st.eps);
      if (st.running_mean && st.running_var) {
        const double unbiased = m > 1 ? v / (m - 1) : var;
        (*st.running_mean)[c] = (1 - st.momentum) * (*st.running_mean)[c] + st.momentum * mean[c];
        (*st.running_var)[c] = (1 - st.momentum) * (*st.running_var)[c] + st.momentum * unbiased;
      }
    }
    if (st.tracked) *st.tracked += 1.0;
  } else if (st.tracked && *st.tracked > 0 && st.running_mean && st.running_var) {
    for (int c = 0; c < C; ++c) {
      mean[c] = (*st.running_mean)[c];
      inv_std[c] = 1.0 / std::sqrt((*st.running_var)[c] + st.eps);
    }
  } else if (fallback_used) {
    *fallback_used = true;
  }

  Tensor xhat = x->value;
  Tensor out = x->value;
  for (int n = 0; n < B; ++n) {
    for (int c = 0; c < C; ++c) {
      double* ph = xhat.data.data() + (n * C + c) * hw;
      double* po = out.data.data() + (n * C + c) * hw;
      const double g = gamma->value.data[c], b = beta->value.data[c];
      for (std::size_t i = 0; i < hw; ++i) {
        ph[i] = (ph[i] - mean[c]) * inv_std[c];
        po[i] = g * ph[i] + b;
      }
    }
  }
  return make(std::move(out), {x, gamma, beta},
              [B, C, hw, m, use_batch, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node& self) {
    const Var& xin = self.inputs[0];
    const Var& gin = self.inputs[1];
    const Var& bin = self.inputs[2];
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int n = 0; n < B; ++n) {
        const double* dy = self.grad.data() + (n * C + c) * hw;
        const double* xh = xhat.data.data() + (n * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh[i];
        }
      }
      if (gin->requires_grad) gin->grad_buffer()[c] += sum_dy_xhat;
      if (bin->requires_grad) bin->grad_buffer()[c] += sum_dy;
      if (!xin->requires_grad) continue;
      const double g = gin->value.data[c];
      auto& gx = xin->grad_buffer();
      for (int n = 0; n < B; ++n) {
        const double* dy = self.grad.data() + (n * C + c) * hw;
        const double* xh = xhat.data.data() + (n * C + c) * hw;
        double* dx = gx.data() + (n * C + c) * hw;
        if (use_batch) {
          const double k = g * inv_std[c] / m;
          for (std::size_t i = 0; i < hw; ++i) dx[i] += k * (m * dy[i] - sum_dy - xh[i] * sum_dy_xhat);
        } else {
          for (std::size_t i = 0; i < hw; ++i) dx[i] += g * inv_std[c] * dy[i];
        }
      }
    }
  });
}

}  // namespace acdmar::ad
