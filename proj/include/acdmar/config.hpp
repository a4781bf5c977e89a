#pragma once

// Run configuration: JSON with sections sim / corpus / solver / model / train /
// bench plus a top-level seed. Values not given fall back to the selected
// scale preset; unknown keys are rejected with ConfigError.

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "acdmar/acdnet.hpp"
#include "acdmar/ct_sim.hpp"
#include "acdmar/pg_solver.hpp"
#include "acdmar/trainer.hpp"

namespace acdmar {

enum class Scale { Desk, Paper };

Scale parse_scale(const std::string& name);
std::string to_string(Scale s);

struct CorpusConfig {
  int n_train = 16;
  int n_test = 4;
  std::string phantom = "random_ellipses";  // random_ellipses | shepp_logan | mixed
  int mask_pool = 50;                       // distinct metal masks, split train/test
  double test_mask_fraction = 0.1;
  double mask_scale = 1.0;

  void validate() const;
};

struct SolverRunConfig {
  ClassicalProxConfig prox;
  // Unset step sizes are derived from the dictionary: eta1 = 1/(2S),
  // eta2 = 1/(2NS) with S = bank_spectral_peak(D); eta3 = 0.5.
  std::optional<double> eta1, eta2, eta3;
};

struct BenchConfig {
  int runs = 20;
  int image_size = 0;  // 0 = sim.image_size
};

struct RunConfig {
  Scale scale = Scale::Desk;
  std::uint64_t seed = 0;
  SimConfig sim;
  CorpusConfig corpus;
  SolverRunConfig solver;
  acdnet::ModelConfig model;
  acdnet::TrainConfig train;
  double val_fraction = 0.1;  // of the training cases, held out for val_psnr
  BenchConfig bench;

  void validate() const;
};

RunConfig preset(Scale scale);

// Applies overrides from j onto base. Throws ConfigError on unknown keys or
// wrongly typed values.
RunConfig apply_overrides(RunConfig base, const nlohmann::json& j);

RunConfig load_config(const std::optional<std::filesystem::path>& path, Scale scale,
                      std::optional<std::uint64_t> seed_override);

nlohmann::json to_json(const RunConfig& cfg);

// Propagates the top-level seed into the sub-configs.
void propagate_seed(RunConfig& cfg);

}  // namespace acdmar
