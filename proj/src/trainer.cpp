#include "acdmar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>

#include "acdmar/error.hpp"
#include "acdmar/metrics.hpp"

namespace acdmar::acdnet {
namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Plane flip_plane(const Plane& p, bool h, bool v) {
  Plane out = p;
  if (h) out = out.rowwise().reverse().eval();
  if (v) out = out.colwise().reverse().eval();
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (patch_size < 1) throw ConfigError("train.patch_size must be >= 1");
  if (learning_rate < 0) throw ConfigError("train.learning_rate must be non-negative");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("train.max_steps must be non-negative");
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (int m : cfg.lr_milestones) {
    if (epoch >= m) lr *= 0.5;
  }
  return lr;
}

MaskedScene extract_patch(const MaskedScene& s, int patch, std::uint64_t seed, bool flip) {
  if (patch > s.height() || patch > s.width()) {
    throw ConfigError("patch size " + std::to_string(patch) + " exceeds image size");
  }
  std::mt19937_64 rng(seed);
  const int y0 = std::uniform_int_distribution<int>(0, s.height() - patch)(rng);
  const int x0 = std::uniform_int_distribution<int>(0, s.width() - patch)(rng);
  const bool fh = flip && (rng() & 1u);
  const bool fv = flip && (rng() & 1u);
  auto crop = [&](const Plane& p) { return flip_plane(p.block(y0, x0, patch, patch), fh, fv); };
  MaskedScene out;
  out.Y = crop(s.Y);
  out.I = crop(s.I);
  if (s.X_gt) out.X_gt = crop(*s.X_gt);
  if (s.X_li) out.X_li = crop(*s.X_li);
  return out;
}

void adam_step(ParamStore& store, AdamState& st, std::vector<std::vector<double>> grads, double lr,
               const TrainConfig& cfg) {
  if (grads.size() != store.size()) throw DimensionError("adam_step: gradient count mismatch");
  if (st.m.empty()) {
    for (const auto& e : store.entries()) {
      st.m.emplace_back(e.value.numel(), 0.0);
      st.v.emplace_back(e.value.numel(), 0.0);
    }
  }
  if (cfg.grad_clip > 0) {
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!store.at(static_cast<int>(i)).trainable) continue;
      for (double g : grads[i]) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip) {
      const double f = cfg.grad_clip / norm;
      for (auto& g : grads) for (double& x : g) x *= f;
    }
  }
  ++st.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& e = store.at(static_cast<int>(i));
    if (!e.trainable) continue;
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t k = 0; k < e.value.numel(); ++k) {
      const double g = grads[i][k];
      m[k] = b1 * m[k] + (1 - b1) * g;
      v[k] = b2 * v[k] + (1 - b2) * g * g;
      e.value.data[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.adam_eps);
    }
  }
}

double mean_masked_psnr(Network& net, const std::vector<MaskedScene>& scenes) {
  if (scenes.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (const auto& s : scenes) sum += masked_psnr(reconstruct(net, s), *s.X_gt, s.I);
  return sum / static_cast<double>(scenes.size());
}

TrainResult train(Network& net, const std::vector<MaskedScene>& train_set,
                  const std::vector<MaskedScene>& val_set, const TrainConfig& cfg,
                  const AdamState* resume, const std::function<void(const TrainLogRow&)>& on_step) {
  cfg.validate();
  if (train_set.empty()) throw Error("train: empty dataset");
  for (const auto& s : train_set) {
    if (!s.X_gt) throw MissingInputError("train: every training scene needs X_gt");
    if (cfg.patch_size > s.height() || cfg.patch_size > s.width()) {
      throw ConfigError("train: patch size exceeds image size");
    }
  }
  const int n = static_cast<int>(train_set.size());
  const int bs = std::min(cfg.batch_size, n);
  const int steps_per_epoch = (n + bs - 1) / bs;

  TrainResult res;
  if (resume) res.optimizer = *resume;
  long step = res.optimizer.step;
  const long total = cfg.max_steps > 0 ? std::min<long>(cfg.max_steps, static_cast<long>(cfg.epochs) * steps_per_epoch)
                                       : static_cast<long>(cfg.epochs) * steps_per_epoch;

  while (step < total) {
    const int epoch = static_cast<int>(step / steps_per_epoch);
    const int in_epoch = static_cast<int>(step % steps_per_epoch);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 prng(mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(perm.begin(), perm.end(), prng);

    const int begin = in_epoch * bs, end = std::min(n, begin + bs);
    std::vector<MaskedScene> batch;
    for (int k = begin; k < end; ++k) {
      const std::uint64_t ps = mix(mix(cfg.seed, static_cast<std::uint64_t>(step)), static_cast<std::uint64_t>(k));
      batch.push_back(extract_patch(train_set[perm[k]], cfg.patch_size, ps, cfg.flip_augment));
    }
    const double lr = learning_rate_at(cfg, epoch);
    auto lg = backward(net, batch, cfg.loss);
    adam_step(net.store(), res.optimizer, std::move(lg.grads), lr, cfg);
    ++step;

    TrainLogRow row{epoch, step, lg.loss, std::numeric_limits<double>::quiet_NaN(), lr};
    const bool epoch_end = step % steps_per_epoch == 0 || step == total;
    if (epoch_end && !val_set.empty()) row.val_psnr = mean_masked_psnr(net, val_set);
    res.log.push_back(row);
    if (on_step) on_step(row);
  }
  return res;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << "epoch,step,loss,val_psnr,lr\n" << std::setprecision(12);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.step << ',' << r.loss << ',';
    if (!std::isnan(r.val_psnr)) os << r.val_psnr;
    os << ',' << r.lr << '\n';
  }
}

}  // namespace acdmar::acdnet
