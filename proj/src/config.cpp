#include "acdmar/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "acdmar/error.hpp"

namespace acdmar {
namespace {

using nlohmann::json;

// Dispatches each key of an object section to a handler; unknown keys throw.
void walk(const json& j, const std::string& section, const std::map<std::string, std::function<void(const json&)>>& h) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto f = h.find(it.key());
    const std::string where = section.empty() ? it.key() : section + "." + it.key();
    if (f == h.end()) throw ConfigError("unknown config key: " + where);
    try {
      f->second(it.value());
    } catch (const json::exception& e) {
      throw ConfigError("bad value for " + where + ": " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> set(T& dst) {
  return [&dst](const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("expected an integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("expected a number");
    }
    dst = v.get<T>();
  };
}

std::function<void(const json&)> set_opt(std::optional<double>& dst) {
  return [&dst](const json& v) {
    if (v.is_null()) dst.reset();
    else if (v.is_number()) dst = v.get<double>();
    else throw ConfigError("expected a number or null");
  };
}

std::pair<double, double> pair_of(const json& v) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw ConfigError("expected [lo, hi]");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

Scale parse_scale(const std::string& name) {
  if (name == "desk") return Scale::Desk;
  if (name == "paper") return Scale::Paper;
  throw ConfigError("unknown scale: " + name + " (expected desk or paper)");
}

std::string to_string(Scale s) { return s == Scale::Desk ? "desk" : "paper"; }

void CorpusConfig::validate() const {
  if (n_train < 0 || n_test < 0) throw ConfigError("corpus case counts must be non-negative");
  if (phantom != "random_ellipses" && phantom != "shepp_logan" && phantom != "mixed") {
    throw ConfigError("corpus.phantom must be random_ellipses, shepp_logan or mixed");
  }
  if (mask_pool < 2) throw ConfigError("corpus.mask_pool must be >= 2");
  if (!(test_mask_fraction > 0 && test_mask_fraction < 1)) {
    throw ConfigError("corpus.test_mask_fraction must lie in (0, 1)");
  }
  if (!(mask_scale > 0)) throw ConfigError("corpus.mask_scale must be positive");
}

void RunConfig::validate() const {
  sim.validate();
  corpus.validate();
  model.validate();
  train.validate();
  ClassicalProxConfig p = solver.prox;
  if (solver.eta1) p.steps.eta1 = *solver.eta1;
  if (solver.eta2) p.steps.eta2 = *solver.eta2;
  if (solver.eta3) p.steps.eta3 = *solver.eta3;
  p.validate();
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("train.val_fraction must lie in [0, 1)");
  if (bench.runs < 20) throw ConfigError("bench.runs must be >= 20");
  if (bench.image_size < 0) throw ConfigError("bench.image_size must be non-negative");
}

RunConfig preset(Scale scale) {
  RunConfig c;
  c.scale = scale;
  if (scale == Scale::Desk) {
    c.sim = SimConfig::desk();
    c.model.d = 16;
    c.model.N = 6;
    c.model.T = 3;
    c.model.Np = 8;
    c.train.batch_size = 2;
    c.train.patch_size = 64;
    c.train.learning_rate = 1e-3;
    // 200 steps over 16 cases in batches of 2 is 25 epochs; the 300-epoch
    // milestones scaled to that length
    c.train.epochs = 25;
    c.train.lr_milestones = {4, 8, 13, 17};
    c.train.max_steps = 200;
  } else {
    c.sim = SimConfig::paper();
    c.corpus.n_train = 1000;
    c.corpus.n_test = 200;
    c.corpus.mask_pool = 100;
  }
  return c;
}

RunConfig apply_overrides(RunConfig c, const json& j) {
  walk(j, "", {
    {"seed", set(c.seed)},
    {"scale", [&](const json& v) { c.scale = parse_scale(v.get<std::string>()); }},
    {"sim", [&](const json& s) {
       walk(s, "sim", {
         {"image_size", set(c.sim.image_size)},
         {"n_views", set(c.sim.n_views)},
         {"arc_degrees", set(c.sim.arc_degrees)},
         {"hu_window", [&](const json& v) { auto [lo, hi] = pair_of(v); c.sim.hu_window = {lo, hi}; }},
         {"metal_hu", set(c.sim.metal_hu)},
         {"trace_amplification", set(c.sim.corruption.trace_amplification)},
         {"noise_level", set(c.sim.corruption.noise_level)},
       });
     }},
    {"corpus", [&](const json& s) {
       walk(s, "corpus", {
         {"n_train", set(c.corpus.n_train)},
         {"n_test", set(c.corpus.n_test)},
         {"phantom", set(c.corpus.phantom)},
         {"mask_pool", set(c.corpus.mask_pool)},
         {"test_mask_fraction", set(c.corpus.test_mask_fraction)},
         {"mask_scale", set(c.corpus.mask_scale)},
       });
     }},
    {"solver", [&](const json& s) {
       walk(s, "solver", {
         {"lambda_M", set(c.solver.prox.lambda_M)},
         {"x_clamp", [&](const json& v) {
            if (v.is_null()) c.solver.prox.x_clamp.reset();
            else c.solver.prox.x_clamp = pair_of(v);
          }},
         {"eta1", set_opt(c.solver.eta1)},
         {"eta2", set_opt(c.solver.eta2)},
         {"eta3", set_opt(c.solver.eta3)},
         {"max_iters", set(c.solver.prox.max_iters)},
         {"tol", set(c.solver.prox.tol)},
         {"update_order", [&](const json& v) { c.solver.prox.update_order = parse_update_order(v.get<std::string>()); }},
       });
     }},
    {"model", [&](const json& s) {
       walk(s, "model", {
         {"p", set(c.model.p)},
         {"d", set(c.model.d)},
         {"N", set(c.model.N)},
         {"T", set(c.model.T)},
         {"Np", set(c.model.Np)},
         {"resblocks", set(c.model.resblocks)},
         {"eta_init", set(c.model.eta_init)},
       });
     }},
    {"train", [&](const json& s) {
       walk(s, "train", {
         {"batch_size", set(c.train.batch_size)},
         {"patch_size", set(c.train.patch_size)},
         {"learning_rate", set(c.train.learning_rate)},
         {"lr_milestones", [&](const json& v) { c.train.lr_milestones = v.get<std::vector<int>>(); }},
         {"epochs", set(c.train.epochs)},
         {"max_steps", set(c.train.max_steps)},
         {"flip_augment", set(c.train.flip_augment)},
         {"grad_clip", set(c.train.grad_clip)},
         {"adam_beta1", set(c.train.adam_beta1)},
         {"adam_beta2", set(c.train.adam_beta2)},
         {"adam_eps", set(c.train.adam_eps)},
         {"mu_final", set(c.train.loss.mu_final)},
         {"mu_other", set(c.train.loss.mu_other)},
         {"omega1", set(c.train.loss.omega1)},
         {"omega2", set(c.train.loss.omega2)},
         {"val_fraction", set(c.val_fraction)},
       });
     }},
    {"bench", [&](const json& s) {
       walk(s, "bench", {
         {"runs", set(c.bench.runs)},
         {"image_size", set(c.bench.image_size)},
       });
     }},
  });
  return c;
}

void propagate_seed(RunConfig& c) {
  c.sim.seed = c.seed;
  c.model.seed = c.seed;
  c.train.seed = c.seed;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path, Scale scale,
                      std::optional<std::uint64_t> seed_override) {
  json j = json::object();
  if (path) {
    std::ifstream is(*path);
    if (!is) throw MissingInputError("missing config file " + path->string());
    try {
      j = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError(path->string() + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(path->string() + ": top level must be an object");
    // A scale named in the file selects the preset the rest overrides.
    if (j.contains("scale")) {
      if (!j["scale"].is_string()) throw ConfigError("scale must be a string");
      scale = parse_scale(j["scale"].get<std::string>());
    }
  }
  RunConfig c = apply_overrides(preset(scale), j);
  if (seed_override) c.seed = *seed_override;
  propagate_seed(c);
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["scale"] = to_string(c.scale);
  j["seed"] = c.seed;
  j["sim"] = {{"image_size", c.sim.image_size},
              {"n_views", c.sim.n_views},
              {"arc_degrees", c.sim.arc_degrees},
              {"hu_window", {c.sim.hu_window.lo, c.sim.hu_window.hi}},
              {"metal_hu", c.sim.metal_hu},
              {"trace_amplification", c.sim.corruption.trace_amplification},
              {"noise_level", c.sim.corruption.noise_level}};
  j["corpus"] = {{"n_train", c.corpus.n_train},
                 {"n_test", c.corpus.n_test},
                 {"phantom", c.corpus.phantom},
                 {"mask_pool", c.corpus.mask_pool},
                 {"test_mask_fraction", c.corpus.test_mask_fraction},
                 {"mask_scale", c.corpus.mask_scale}};
  j["solver"] = {{"lambda_M", c.solver.prox.lambda_M},
                 {"x_clamp", c.solver.prox.x_clamp ? json{c.solver.prox.x_clamp->first, c.solver.prox.x_clamp->second}
                                                   : json(nullptr)},
                 {"eta1", opt(c.solver.eta1)},
                 {"eta2", opt(c.solver.eta2)},
                 {"eta3", opt(c.solver.eta3)},
                 {"max_iters", c.solver.prox.max_iters},
                 {"tol", c.solver.prox.tol},
                 {"update_order", to_string(c.solver.prox.update_order)}};
  j["model"] = {{"p", c.model.p}, {"d", c.model.d}, {"N", c.model.N}, {"T", c.model.T},
                {"Np", c.model.Np}, {"resblocks", c.model.resblocks}, {"eta_init", c.model.eta_init}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"patch_size", c.train.patch_size},
                {"learning_rate", c.train.learning_rate},
                {"lr_milestones", c.train.lr_milestones},
                {"epochs", c.train.epochs},
                {"max_steps", c.train.max_steps},
                {"flip_augment", c.train.flip_augment},
                {"grad_clip", c.train.grad_clip},
                {"adam_beta1", c.train.adam_beta1},
                {"adam_beta2", c.train.adam_beta2},
                {"adam_eps", c.train.adam_eps},
                {"mu_final", c.train.loss.mu_final},
                {"mu_other", c.train.loss.mu_other},
                {"omega1", c.train.loss.omega1},
                {"omega2", c.train.loss.omega2},
                {"val_fraction", c.val_fraction}};
  j["bench"] = {{"runs", c.bench.runs}, {"image_size", c.bench.image_size}};
  return j;
}

}  // namespace acdmar
