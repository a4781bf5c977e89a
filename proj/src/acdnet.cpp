#include "acdmar/acdnet.hpp"

#include <cmath>
#include <random>

#include "acdmar/error.hpp"

namespace acdmar::acdnet {

using ad::Tensor;
using ad::Var;

namespace {

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

class Initializer {
 public:
  Initializer(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  int uniform(const std::string& name, std::vector<int> shape, double bound) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> U(-bound, bound);
    for (double& v : t.data) v = U(rng_);
    return store_.add(name, std::move(t));
  }

  int fill(const std::string& name, std::vector<int> shape, double value, bool trainable = true) {
    return store_.add(name, Tensor(std::move(shape), value), trainable);
  }

  int dictionary(const std::string& name, int d, int p) {
    Tensor t({d, p, p});
    std::normal_distribution<double> G(0.0, 1.0);
    for (double& v : t.data) v = G(rng_);
    const std::size_t p2 = static_cast<std::size_t>(p) * p;
    for (int i = 0; i < d; ++i) {
      double nrm = 0.0;
      for (std::size_t k = 0; k < p2; ++k) nrm += t.data[i * p2 + k] * t.data[i * p2 + k];
      nrm = std::sqrt(nrm);
      for (std::size_t k = 0; k < p2; ++k) t.data[i * p2 + k] /= nrm;
    }
    return store_.add(name, std::move(t));
  }

  BnIdx batch_norm(const std::string& prefix, int C, double gamma = 1.0) {
    BnIdx b;
    b.gamma = fill(prefix + ".gamma", {C}, gamma);
    b.beta = fill(prefix + ".beta", {C}, 0.0);
    b.mean = fill(prefix + ".running_mean", {C}, 0.0, false);
    b.var = fill(prefix + ".running_var", {C}, 1.0, false);
    b.tracked = fill(prefix + ".tracked", {1}, 0.0, false);
    return b;
  }

  // Fan-in uniform convs; bn2 starts with zero scale so every block is the
  // identity. A zero conv2 would not do: bn2 rescales its first small update
  // to unit variance.
  ProxTensorIdx prox_tensor(const std::string& prefix, int C, int blocks) {
    ProxTensorIdx idx;
    idx.channels = C;
    const double bound = 1.0 / std::sqrt(9.0 * C);
    for (int k = 0; k < blocks; ++k) {
      const std::string p = prefix + ".block" + std::to_string(k);
      ResBlockIdx r;
      r.conv1.w = uniform(p + ".conv1.weight", {C, C, 3, 3}, bound);
      r.conv1.b = uniform(p + ".conv1.bias", {C}, bound);
      r.bn1 = batch_norm(p + ".bn1", C);
      r.conv2.w = uniform(p + ".conv2.weight", {C, C, 3, 3}, bound);
      r.conv2.b = uniform(p + ".conv2.bias", {C}, bound);
      r.bn2 = batch_norm(p + ".bn2", C, 0.0);
      idx.blocks.push_back(r);
    }
    return idx;
  }

  ProxKIdx prox_k(const std::string& prefix, int d) {
    ProxKIdx idx;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    idx.w1 = uniform(prefix + ".linear1.weight", {d, d}, bound);
    idx.b1 = uniform(prefix + ".linear1.bias", {d}, bound);
    idx.w2 = fill(prefix + ".linear2.weight", {d, d}, 0.0);
    idx.b2 = fill(prefix + ".linear2.bias", {d}, 0.0);
    return idx;
  }

 private:
  ParamStore& store_;
  std::mt19937_64 rng_;
};

Var eta(ForwardContext& ctx, int rho_idx) { return ad::softplus(ctx.param(rho_idx)); }

// Code-update steps are expressed in units of 1/L of the initial dictionary.
Var eta_m(ForwardContext& ctx, int rho_idx) {
  const Network& net = ctx.net();
  return ad::scale(eta(ctx, rho_idx), net.store().at(net.m_step_scale_index()).value.data[0]);
}

// I . (A + X - Y)
Var masked_residual(const Batch& b, const Var& A, const Var& X) {
  return ad::mul(b.I, ad::sub(ad::add(A, X), b.Y));
}

// X - eta3 I . (X + A - Y), identical to (1 - eta3 I) X + eta3 I (Y - A).
Var x_half_step(const Batch& b, const Var& X, const Var& A, const Var& eta3) {
  return ad::sub(X, ad::scale_by(masked_residual(b, A, X), eta3));
}

void check_finite(const Var& v, const std::string& where) {
  for (double x : v->value.data) {
    if (!std::isfinite(x)) throw DivergenceError("non-finite value in " + where);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (p < 1 || p % 2 == 0) throw ConfigError("model.p must be odd and positive");
  if (d < 1 || N < 1 || Np < 1) throw ConfigError("model.d, model.N, model.Np must be positive");
  if (N > d) throw ConfigError("model.N must not exceed model.d (M0 keeps the first N warm-up channels)");
  if (T < 0) throw ConfigError("model.T must be non-negative");
  if (resblocks < 1) throw ConfigError("model.resblocks must be positive");
  if (!(eta_init > 0)) throw ConfigError("model.eta_init must be positive");
}

double LossWeights::mu_at(int t, int T) const {
  if (!mu.empty()) return mu.at(static_cast<std::size_t>(t));
  return t == T ? mu_final : mu_other;
}

int ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) throw Error("parameter registered twice: " + name);
  const int idx = static_cast<int>(entries_.size());
  entries_.push_back({name, std::move(value), trainable});
  index_[name] = idx;
  return idx;
}

std::optional<int> ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Network::Network(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Initializer init(store_, cfg_.seed);
  const double rho = inverse_softplus(cfg_.eta_init);
  const int C_x = 1 + cfg_.Np;

  dict_ = init.dictionary("dictionary", cfg_.d, cfg_.p);
  m_step_scale_ = init.fill("dictionary.m_step_scale", {1},
                            1.0 / (2.0 * bank_spectral_peak(dictionary())), false);

  init_.expand.w = init.uniform("init.expand.weight", {cfg_.Np, 1, 3, 3}, 1.0 / 3.0);
  init_.expand.b = init.uniform("init.expand.bias", {cfg_.Np}, 1.0 / 3.0);
  init_.prox_x = init.prox_tensor("init.prox_x", C_x, cfg_.resblocks);
  init_.prox_m_first = init.prox_tensor("init.prox_m_first", cfg_.d, cfg_.resblocks);
  init_.prox_m_refine = init.prox_tensor("init.prox_m_refine", cfg_.d, cfg_.resblocks);
  init_.prox_x_refine = init.prox_tensor("init.prox_x_refine", C_x, cfg_.resblocks);
  init_.prox_k = init.prox_k("init.prox_k", cfg_.d);
  init_.rho_m_first = init.fill("init.rho_m_first", {1}, rho);
  init_.rho_m_refine = init.fill("init.rho_m_refine", {1}, rho);
  init_.rho_x_refine = init.fill("init.rho_x_refine", {1}, rho);
  init_.rho_k = init.fill("init.rho_k", {1}, rho);

  for (int t = 0; t < cfg_.T; ++t) {
    const std::string p = "stage" + std::to_string(t + 1);
    StageIdx s;
    s.k = init.prox_k(p + ".prox_k", cfg_.d);
    s.m = init.prox_tensor(p + ".prox_m", cfg_.N, cfg_.resblocks);
    s.x = init.prox_tensor(p + ".prox_x", C_x, cfg_.resblocks);
    s.rho1 = init.fill(p + ".rho1", {1}, rho);
    s.rho2 = init.fill(p + ".rho2", {1}, rho);
    s.rho3 = init.fill(p + ".rho3", {1}, rho);
    stages_.push_back(s);
  }
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& e : store_.entries()) {
    if (e.trainable) n += e.value.numel();
  }
  return n;
}

StepSizes Network::stage_steps(int t) const {
  auto sp = [&](int idx) {
    const double r = store_.at(idx).value.data[0];
    return r > 30 ? r : std::log1p(std::exp(r));
  };
  const auto& s = stages_.at(static_cast<std::size_t>(t));
  return {sp(s.rho1), sp(s.rho2) * store_.at(m_step_scale_).value.data[0], sp(s.rho3)};
}

Dictionary Network::dictionary() const {
  Dictionary D(cfg_.p, cfg_.d);
  const auto& v = store_.at(dict_).value.data;
  std::copy(v.begin(), v.end(), D.data().begin());
  return D;
}

ForwardContext::ForwardContext(Network& net, Mode mode)
    : net_(net), mode_(mode), leaves_(net.store().size()) {}

Var ForwardContext::param(int idx) {
  auto& slot = leaves_.at(static_cast<std::size_t>(idx));
  if (!slot) {
    const auto& e = net_.store().at(idx);
    slot = ad::leaf(e.value, e.trainable && mode_ == Mode::Train);
  }
  return slot;
}

ad::BatchNormState ForwardContext::bn_state(const BnIdx& idx) {
  ad::BatchNormState s;
  s.running_mean = &net_.store().at(idx.mean).value.data;
  s.running_var = &net_.store().at(idx.var).value.data;
  s.tracked = &net_.store().at(idx.tracked).value.data[0];
  return s;
}

std::vector<std::vector<double>> ForwardContext::gradients() const {
  std::vector<std::vector<double>> g(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    const auto& e = net_.store().at(static_cast<int>(i));
    if (leaves_[i] && !leaves_[i]->grad.empty()) g[i] = leaves_[i]->grad;
    else g[i].assign(e.value.numel(), 0.0);
  }
  return g;
}

Batch make_batch(std::span<const MaskedScene> scenes) {
  if (scenes.empty()) throw Error("make_batch: no scenes");
  Batch b;
  b.size = static_cast<int>(scenes.size());
  b.height = scenes[0].height();
  b.width = scenes[0].width();
  const std::size_t hw = static_cast<std::size_t>(b.height) * b.width;
  Tensor Y({b.size, 1, b.height, b.width}), I(Y.shape), Xli(Y.shape), Xgt(Y.shape);
  bool all_gt = true;
  for (int n = 0; n < b.size; ++n) {
    const auto& s = scenes[n];
    s.validate();
    if (s.height() != b.height || s.width() != b.width) throw DimensionError("make_batch: scene sizes differ");
    if (!s.X_li) {
      throw MissingInputError("scene has no X_li; run the LI baseline (li_mar) before the network");
    }
    std::copy_n(s.Y.data(), hw, Y.data.begin() + n * hw);
    std::copy_n(s.I.data(), hw, I.data.begin() + n * hw);
    std::copy_n(s.X_li->data(), hw, Xli.data.begin() + n * hw);
    if (s.X_gt) std::copy_n(s.X_gt->data(), hw, Xgt.data.begin() + n * hw);
    else all_gt = false;
  }
  b.Y = ad::constant(std::move(Y));
  b.I = ad::constant(std::move(I));
  b.X_li = ad::constant(std::move(Xli));
  if (all_gt) b.X_gt = ad::constant(std::move(Xgt));
  return b;
}

Var proxnet_k_forward(ForwardContext& ctx, const ProxKIdx& idx, const Var& K_half) {
  Var h = ad::relu(ad::linear_columns(K_half, ctx.param(idx.w1), ctx.param(idx.b1)));
  Var r = ad::linear_columns(h, ctx.param(idx.w2), ctx.param(idx.b2));
  return ad::normalize_columns(ad::add(K_half, r));
}

Var proxnet_tensor_forward(ForwardContext& ctx, const ProxTensorIdx& idx, const Var& t) {
  const bool train = ctx.mode() == Mode::Train;
  Var x = t;
  for (const auto& blk : idx.blocks) {
    Var h = ad::conv2d(x, ctx.param(blk.conv1.w), ctx.param(blk.conv1.b));
    h = ad::batch_norm(h, ctx.param(blk.bn1.gamma), ctx.param(blk.bn1.beta), ctx.bn_state(blk.bn1),
                       train, &ctx.bn_fallback);
    h = ad::relu(h);
    h = ad::conv2d(h, ctx.param(blk.conv2.w), ctx.param(blk.conv2.b));
    h = ad::batch_norm(h, ctx.param(blk.bn2.gamma), ctx.param(blk.bn2.beta), ctx.bn_state(blk.bn2),
                       train, &ctx.bn_fallback);
    x = ad::add(x, h);
  }
  return x;
}

Var synthesize(const Var& dict, const Var& K, const Var& M) {
  return ad::conv_per_sample(M, ad::combine_filters(dict, K));
}

InitOutputs init_state(ForwardContext& ctx, const Batch& b) {
  Network& net = ctx.net();
  const auto& cfg = net.config();
  const auto& ix = net.init();
  const Var D = ctx.param(net.dict_index());

  // Channel expansion of the LI image, then split into X and P.
  Var expanded = ad::conv2d(b.X_li, ctx.param(ix.expand.w), ctx.param(ix.expand.b));
  Var z = proxnet_tensor_forward(ctx, ix.prox_x, ad::concat_channels(b.X_li, expanded));
  InitOutputs out;
  out.X_expanded = ad::slice_channels(z, 0, 1);
  Var X = out.X_expanded;
  Var P = ad::slice_channels(z, 1, 1 + cfg.Np);

  // No-weighting warm-up: all d dictionary filters act as the bank.
  const Var bank = ad::broadcast_dict(D, b.size);
  // From M = 0 the synthesized artifact vanishes, so R = I . (X - Y).
  Var R = ad::mul(b.I, ad::sub(X, b.Y));
  Var M = ad::scale_by(ad::scale(ad::conv_transpose_per_sample(R, bank), -2.0), eta_m(ctx, ix.rho_m_first));
  M = proxnet_tensor_forward(ctx, ix.prox_m_first, M);

  // Refinement iteration: M-update then X-update.
  R = masked_residual(b, ad::conv_per_sample(M, bank), X);
  Var M_half = ad::sub(M, ad::scale_by(ad::scale(ad::conv_transpose_per_sample(R, bank), 2.0),
                                       eta_m(ctx, ix.rho_m_refine)));
  M = proxnet_tensor_forward(ctx, ix.prox_m_refine, M_half);
  Var X_half = x_half_step(b, X, ad::conv_per_sample(M, bank), eta(ctx, ix.rho_x_refine));
  z = proxnet_tensor_forward(ctx, ix.prox_x_refine, ad::concat_channels(X_half, P));
  X = ad::slice_channels(z, 0, 1);
  P = ad::slice_channels(z, 1, 1 + cfg.Np);

  out.M_full = M;
  M = ad::slice_channels(M, 0, cfg.N);

  // K-net pass from K = 0 (artifact is zero there, R = I . (X - Y)).
  R = ad::mul(b.I, ad::sub(X, b.Y));
  Var gK = ad::scale(ad::project_on_dict(D, ad::conv_weight_grad(M, R, cfg.p)), 2.0);
  Var K = proxnet_k_forward(ctx, ix.prox_k, ad::scale_by(ad::scale(gK, -1.0), eta(ctx, ix.rho_k)));

  out.state = {K, M, X, P};
  return out;
}

StageState stage_forward(ForwardContext& ctx, int stage, const Batch& b, const StageState& s) {
  Network& net = ctx.net();
  const auto& cfg = net.config();
  const auto& st = net.stages().at(static_cast<std::size_t>(stage));
  const Var D = ctx.param(net.dict_index());

  // K-net
  Var R = masked_residual(b, synthesize(D, s.K, s.M), s.X);
  Var gK = ad::scale(ad::project_on_dict(D, ad::conv_weight_grad(s.M, R, cfg.p)), 2.0);
  Var K = proxnet_k_forward(ctx, st.k, ad::sub(s.K, ad::scale_by(gK, eta(ctx, st.rho1))));

  // M-net, with the updated K
  Var F = ad::combine_filters(D, K);
  R = masked_residual(b, ad::conv_per_sample(s.M, F), s.X);
  Var gM = ad::scale(ad::conv_transpose_per_sample(R, F), 2.0);
  Var M = proxnet_tensor_forward(ctx, st.m, ad::sub(s.M, ad::scale_by(gM, eta_m(ctx, st.rho2))));

  // X-net on the (1 + Np)-channel concatenation
  Var A = ad::conv_per_sample(M, F);
  Var X_half = x_half_step(b, s.X, A, eta(ctx, st.rho3));
  Var z = proxnet_tensor_forward(ctx, st.x, ad::concat_channels(X_half, s.P));
  return {K, M, ad::slice_channels(z, 0, 1), ad::slice_channels(z, 1, 1 + cfg.Np)};
}

ForwardResult network_forward(ForwardContext& ctx, const Batch& b) {
  ForwardResult out;
  out.init = init_state(ctx, b);
  const Var D = ctx.param(ctx.net().dict_index());
  StageState s = out.init.state;
  check_finite(s.X, "initialization");
  check_finite(s.K, "initialization");
  out.X.push_back(s.X);
  out.A.push_back(synthesize(D, s.K, s.M));
  out.K.push_back(s.K);
  const int T = ctx.net().config().T;
  for (int t = 0; t < T; ++t) {
    s = stage_forward(ctx, t, b, s);
    const std::string where = "stage " + std::to_string(t + 1);
    check_finite(s.X, where);
    check_finite(s.M, where);
    check_finite(s.K, where);
    out.X.push_back(s.X);
    out.A.push_back(synthesize(D, s.K, s.M));
    out.K.push_back(s.K);
  }
  return out;
}

Var loss(const ForwardResult& out, const Batch& b, const LossWeights& w) {
  if (!b.X_gt) throw MissingInputError("loss requires ground truth X_gt");
  const Var& Xgt = *b.X_gt;
  const int T = static_cast<int>(out.X.size()) - 1;
  const Var clean_artifact = ad::sub(b.Y, Xgt);
  Var total;
  for (int t = 0; t <= T; ++t) {
    const double mu = w.mu_at(t, T);
    if (mu == 0.0) continue;
    Var ex = ad::mul(b.I, ad::sub(Xgt, out.X[t]));
    Var ea = ad::mul(b.I, ad::sub(clean_artifact, out.A[t]));
    Var term = ad::add(ad::sum_square(ex), ad::scale(ad::sum_abs(ex), w.omega1));
    term = ad::add(term, ad::scale(ad::sum_abs(ea), w.omega2));
    term = ad::scale(term, mu);
    total = total ? ad::add(total, term) : term;
  }
  if (!total) return ad::scalar(0.0);
  return ad::scale(total, 1.0 / b.size);
}

LossAndGrads backward(Network& net, std::span<const MaskedScene> scenes, const LossWeights& w) {
  ForwardContext ctx(net, Mode::Train);
  const Batch b = make_batch(scenes);
  const ForwardResult out = network_forward(ctx, b);
  const Var L = loss(out, b, w);
  ad::backward(L);
  return {L->value.data[0], ctx.gradients()};
}

Plane to_plane(const Tensor& t, int batch_index, int channel) {
  const int C = t.dim(1), H = t.dim(2), W = t.dim(3);
  const std::size_t hw = static_cast<std::size_t>(H) * W;
  Plane p(H, W);
  std::copy_n(t.data.begin() + (static_cast<std::size_t>(batch_index) * C + channel) * hw, hw, p.data());
  return p;
}

WeightMatrix to_weight_matrix(const Tensor& K, int batch_index) {
  const int d = K.dim(1), N = K.dim(2);
  WeightMatrix m(d, N);
  for (int i = 0; i < d; ++i) {
    for (int n = 0; n < N; ++n) m(i, n) = K.data[(static_cast<std::size_t>(batch_index) * d + i) * N + n];
  }
  return m;
}

StageImages reconstruct_stages(Network& net, const MaskedScene& scene) {
  ForwardContext ctx(net, Mode::Eval);
  const Batch b = make_batch(std::span<const MaskedScene>(&scene, 1));
  const ForwardResult out = network_forward(ctx, b);
  StageImages imgs;
  for (const auto& x : out.X) imgs.X.push_back(to_plane(x->value));
  for (const auto& a : out.A) imgs.A.push_back(to_plane(a->value));
  return imgs;
}

Plane reconstruct(Network& net, const MaskedScene& scene) {
  return reconstruct_stages(net, scene).X.back();
}

}  // namespace acdmar::acdnet
