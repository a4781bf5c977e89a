#pragma once

// Unrolled weighted-convolutional-dictionary network.
//
// Each stage runs K-net -> M-net -> X-net: an analytic gradient half-step
// followed by a learned proximal network. The X-net carries N_p auxiliary
// feature channels alongside the image. Initialization runs the channel
// expansion of the LI image, a no-weighting warm-up of M and X with the full
// dictionary (one estimate plus one refinement iteration), and a K-net pass
// from K = 0.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acdmar/autograd.hpp"
#include "acdmar/wcd_model.hpp"

namespace acdmar::acdnet {

struct ModelConfig {
  int p = 9;           // dictionary filter size
  int d = 32;          // dictionary size
  int N = 6;           // mixed filters per sample
  int T = 10;          // unrolled stages
  int Np = 32;         // auxiliary X-net channels
  int resblocks = 3;   // residual blocks per tensor proximal network
  double eta_init = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossWeights {
  double mu_final = 1.0;
  double mu_other = 0.1;
  double omega1 = 5e-4;
  double omega2 = 5e-4;
  // Per-stage overrides indexed by t = 0..T; empty means use the defaults.
  std::vector<double> mu;

  [[nodiscard]] double mu_at(int t, int T) const;
};

struct ParamEntry {
  std::string name;
  ad::Tensor value;
  bool trainable = true;
};

// Named tensors of a network. Registering a name twice is a construction error,
// and every trainable tensor the forward pass reads must live here.
class ParamStore {
 public:
  int add(const std::string& name, ad::Tensor value, bool trainable = true);

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  ParamEntry& at(int i) { return entries_.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] const ParamEntry& at(int i) const { return entries_.at(static_cast<std::size_t>(i)); }
  [[nodiscard]] std::optional<int> find(const std::string& name) const;
  [[nodiscard]] const std::vector<ParamEntry>& entries() const { return entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, int> index_;
};

struct ConvIdx {
  int w = -1;
  int b = -1;
};

struct BnIdx {
  int gamma = -1, beta = -1, mean = -1, var = -1, tracked = -1;
};

struct ResBlockIdx {
  ConvIdx conv1;
  BnIdx bn1;
  ConvIdx conv2;
  BnIdx bn2;
};

struct ProxTensorIdx {
  int channels = 0;
  std::vector<ResBlockIdx> blocks;
};

struct ProxKIdx {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

// Step sizes are stored as rho with eta = softplus(rho).
struct StageIdx {
  ProxKIdx k;
  ProxTensorIdx m;
  ProxTensorIdx x;
  int rho1 = -1, rho2 = -1, rho3 = -1;
};

struct InitIdx {
  ConvIdx expand;               // C_p: 3x3, 1 -> Np
  ProxTensorIdx prox_x;         // on concat(X_LI, C_p (x) X_LI)
  ProxTensorIdx prox_m_first;   // d channels, first no-weighting M estimate
  ProxTensorIdx prox_m_refine;  // d channels, refinement iteration
  ProxTensorIdx prox_x_refine;  // 1 + Np channels, refinement iteration
  ProxKIdx prox_k;
  int rho_m_first = -1, rho_m_refine = -1, rho_x_refine = -1, rho_k = -1;
};

class Network {
 public:
  Network() = default;
  explicit Network(const ModelConfig& cfg);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  [[nodiscard]] const ParamStore& store() const { return store_; }
  [[nodiscard]] int dict_index() const { return dict_; }
  // Non-trainable 1 / (2 max_w sum_i |D_i(w)|^2) of the initial dictionary.
  [[nodiscard]] int m_step_scale_index() const { return m_step_scale_; }
  [[nodiscard]] const InitIdx& init() const { return init_; }
  [[nodiscard]] const std::vector<StageIdx>& stages() const { return stages_; }

  // Trainable scalar count.
  [[nodiscard]] std::size_t param_count() const;

  // Effective step sizes of stage t (positivity map, M step in units of 1/L).
  [[nodiscard]] StepSizes stage_steps(int t) const;

  [[nodiscard]] Dictionary dictionary() const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  int dict_ = -1;
  int m_step_scale_ = -1;
  InitIdx init_;
  std::vector<StageIdx> stages_;
};

enum class Mode { Train, Eval };

// Leaf variables for one forward/backward pass over a network's parameters.
class ForwardContext {
 public:
  ForwardContext(Network& net, Mode mode);

  ad::Var param(int idx);
  ad::BatchNormState bn_state(const BnIdx& idx);
  [[nodiscard]] Mode mode() const { return mode_; }
  [[nodiscard]] Network& net() { return net_; }

  // Gradient per store entry (zeros where nothing flowed).
  [[nodiscard]] std::vector<std::vector<double>> gradients() const;

  bool bn_fallback = false;

 private:
  Network& net_;
  Mode mode_;
  std::vector<ad::Var> leaves_;
};

struct Batch {
  int size = 0, height = 0, width = 0;
  ad::Var Y, I, X_li;
  std::optional<ad::Var> X_gt;
};

// Stacks scenes into [B, 1, H, W] constants. Requires X_li on every scene;
// X_gt is included when present on all of them.
Batch make_batch(std::span<const MaskedScene> scenes);

struct StageState {
  ad::Var K;  // [B, d, N]
  ad::Var M;  // [B, N, H, W]
  ad::Var X;  // [B, 1, H, W]
  ad::Var P;  // [B, Np, H, W]
};

struct InitOutputs {
  StageState state;
  ad::Var X_expanded;  // X after the channel-expansion proximal net, before refinement
  ad::Var M_full;      // d-channel warm-up codes before channel selection
};

ad::Var proxnet_k_forward(ForwardContext& ctx, const ProxKIdx& idx, const ad::Var& K_half);
ad::Var proxnet_tensor_forward(ForwardContext& ctx, const ProxTensorIdx& idx, const ad::Var& t);

// A = (D * K) (x) M for batched K, M.
ad::Var synthesize(const ad::Var& dict, const ad::Var& K, const ad::Var& M);

InitOutputs init_state(ForwardContext& ctx, const Batch& batch);
StageState stage_forward(ForwardContext& ctx, int stage, const Batch& batch, const StageState& s);

struct ForwardResult {
  std::vector<ad::Var> X;  // t = 0..T
  std::vector<ad::Var> A;  // t = 0..T
  std::vector<ad::Var> K;  // t = 0..T
  InitOutputs init;
};

// Throws DivergenceError naming the stage if a non-finite value appears.
ForwardResult network_forward(ForwardContext& ctx, const Batch& batch);

// Multi-stage loss averaged over the batch. Requires X_gt.
ad::Var loss(const ForwardResult& out, const Batch& batch, const LossWeights& w);

struct LossAndGrads {
  double loss = 0.0;
  std::vector<std::vector<double>> grads;  // aligned with store entries
};

// Train-mode forward + reverse pass.
LossAndGrads backward(Network& net, std::span<const MaskedScene> scenes, const LossWeights& w);

// Eval-mode forward; returns X^(T) of a single scene.
Plane reconstruct(Network& net, const MaskedScene& scene);

// Eval-mode forward returning every stage image and artifact.
struct StageImages {
  std::vector<Plane> X;
  std::vector<Plane> A;
};
StageImages reconstruct_stages(Network& net, const MaskedScene& scene);

Plane to_plane(const ad::Tensor& t, int batch_index = 0, int channel = 0);
WeightMatrix to_weight_matrix(const ad::Tensor& K, int batch_index = 0);

}  // namespace acdmar::acdnet
