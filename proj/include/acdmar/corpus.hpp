#pragma once

// Paired clean / metal-corrupted corpus. Metal masks come from a pool split
// into disjoint train and test subsets; each case pairs a fresh phantom with
// one mask from its split's subset and carries its LI reconstruction.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "acdmar/config.hpp"

namespace acdmar {

// splitmix64 of a combined word; the seed-derivation used across the pipeline.
std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b);

struct MaskPoolSplit {
  std::vector<int> train;  // pool indices
  std::vector<int> test;
};

MaskPoolSplit split_mask_pool(const CorpusConfig& cfg);

struct CorpusCase {
  std::string id;     // e.g. "train_0003"
  std::string split;  // "train" | "test"
  MaskedScene scene;  // with X_gt and X_li
  nlohmann::json meta;
};

// Builds case `index` of a split deterministically from cfg.seed.
CorpusCase make_case(const RunConfig& cfg, const std::string& split, int index);

// Writes <out>/train/<id>/ and <out>/test/<id>/ bundles. Cases are generated
// on up to `jobs` threads; every output is a per-case file.
void write_corpus(const RunConfig& cfg, const std::filesystem::path& out, int jobs = 1);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are rethrown
// (the one from the lowest index wins).
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace acdmar
