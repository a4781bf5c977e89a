#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "acdmar/acdnet.hpp"

namespace acdmar::acdnet {

struct TrainConfig {
  int batch_size = 32;
  int patch_size = 64;
  double learning_rate = 2e-4;
  std::vector<int> lr_milestones{50, 100, 150, 200};  // epochs at which lr halves
  int epochs = 300;
  long max_steps = 0;  // 0 = no cap
  std::uint64_t seed = 0;
  bool flip_augment = true;
  double grad_clip = 10.0;  // global L2 norm; <= 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossWeights loss;

  void validate() const;
};

struct AdamState {
  long step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

struct TrainLogRow {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double val_psnr = 0.0;  // NaN except on the last step of an epoch
  double lr = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  AdamState optimizer;
};

double learning_rate_at(const TrainConfig& cfg, int epoch);

// Random (seeded) patch crop with optional horizontal/vertical flips.
MaskedScene extract_patch(const MaskedScene& scene, int patch, std::uint64_t seed, bool flip);

// Adam with global-norm clipping. Updates trainable entries of the store.
void adam_step(ParamStore& store, AdamState& state, std::vector<std::vector<double>> grads,
               double lr, const TrainConfig& cfg);

// Trains in place. Batches are drawn from a per-epoch permutation derived
// from (seed, epoch), so runs are reproducible and resumable from any
// optimizer state. `resume` continues from a saved optimizer state.
TrainResult train(Network& net, const std::vector<MaskedScene>& train_set,
                  const std::vector<MaskedScene>& val_set, const TrainConfig& cfg,
                  const AdamState* resume = nullptr,
                  const std::function<void(const TrainLogRow&)>& on_step = {});

double mean_masked_psnr(Network& net, const std::vector<MaskedScene>& scenes);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

}  // namespace acdmar::acdnet
