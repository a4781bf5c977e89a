#include "acdmar/corpus.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

#include "acdmar/error.hpp"
#include "acdmar/io.hpp"

namespace acdmar {

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MaskPoolSplit split_mask_pool(const CorpusConfig& cfg) {
  cfg.validate();
  const int n_test = std::clamp(static_cast<int>(std::lround(cfg.test_mask_fraction * cfg.mask_pool)), 1,
                                cfg.mask_pool - 1);
  MaskPoolSplit s;
  for (int i = 0; i < cfg.mask_pool; ++i) (i < cfg.mask_pool - n_test ? s.train : s.test).push_back(i);
  return s;
}

CorpusCase make_case(const RunConfig& cfg, const std::string& split, int index) {
  if (split != "train" && split != "test") throw ConfigError("split must be train or test");
  const auto pool = split_mask_pool(cfg.corpus);
  const auto& masks = split == "train" ? pool.train : pool.test;
  const std::uint64_t split_tag = split == "train" ? 1 : 2;
  const std::uint64_t case_seed = derive_seed(derive_seed(cfg.seed, split_tag), static_cast<std::uint64_t>(index));

  const int mask_index = masks[derive_seed(case_seed, 7) % masks.size()];
  const std::uint64_t mask_seed = derive_seed(cfg.seed ^ 0x6d61736bULL, static_cast<std::uint64_t>(mask_index));
  PhantomKind kind = PhantomKind::RandomEllipses;
  if (cfg.corpus.phantom == "shepp_logan") kind = PhantomKind::SheppLogan;
  if (cfg.corpus.phantom == "mixed" && derive_seed(case_seed, 11) % 4 == 0) kind = PhantomKind::SheppLogan;
  const std::uint64_t phantom_seed = derive_seed(case_seed, 3);

  const int n = cfg.sim.image_size;
  const Plane phantom = make_phantom(kind, n, phantom_seed);
  const Plane mask = random_metal_mask(n, mask_seed, cfg.corpus.mask_scale);
  SimConfig sim = cfg.sim;
  sim.seed = derive_seed(case_seed, 5);

  CorpusCase c;
  std::ostringstream id;
  id << split << '_' << std::setw(4) << std::setfill('0') << index;
  c.id = id.str();
  c.split = split;
  c.scene = simulate_case(phantom, mask, sim);
  c.scene.X_li = li_mar(c.scene, sim);
  c.meta = {{"case_id", c.id},
            {"split", split},
            {"phantom", kind == PhantomKind::SheppLogan ? "shepp_logan" : "random_ellipses"},
            {"phantom_seed", phantom_seed},
            {"mask_index", mask_index},
            {"metal_pixels", static_cast<long>(mask.sum())},
            {"sim_seed", sim.seed},
            {"seed", cfg.seed},
            {"hu_window", {sim.hu_window.lo, sim.hu_window.hi}},
            {"sim", to_json(cfg)["sim"]}};
  return c;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::clamp(jobs, 1, std::max(1, n));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(std::max(0, n)));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void write_corpus(const RunConfig& cfg, const std::filesystem::path& out, int jobs) {
  std::vector<std::pair<std::string, int>> todo;
  for (int i = 0; i < cfg.corpus.n_train; ++i) todo.emplace_back("train", i);
  for (int i = 0; i < cfg.corpus.n_test; ++i) todo.emplace_back("test", i);
  std::filesystem::create_directories(out / "train");
  std::filesystem::create_directories(out / "test");
  parallel_for(static_cast<int>(todo.size()), jobs, [&](int k) {
    const auto c = make_case(cfg, todo[k].first, todo[k].second);
    io::write_case(out / c.split / c.id, c.scene, c.meta);
  });
}

}  // namespace acdmar
