// acdmar: simulate corpora, run the classical solver, train / apply the
// unrolled network, evaluate and benchmark.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "acdmar/checkpoint.hpp"
#include "acdmar/config.hpp"
#include "acdmar/corpus.hpp"
#include "acdmar/error.hpp"
#include "acdmar/io.hpp"
#include "acdmar/metrics.hpp"
#include "acdmar/pg_solver.hpp"
#include "acdmar/png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace acdmar;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kDiverged = 3, kMissing = 4 };

struct Common {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scale = "desk";
  int jobs = 1;

  void attach(CLI::App* app, bool need_out = true) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--seed", seed, "Overrides the configured seed");
    auto* o = app->add_option("--out", out, "Output directory");
    if (need_out) o->required();
    app->add_option("--scale", scale, "Preset: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--jobs", jobs, "Worker threads for corpus-level work")->check(CLI::PositiveNumber);
  }

  RunConfig resolve() const {
    std::optional<fs::path> p;
    if (config) p = fs::path(*config);
    return load_config(p, parse_scale(scale), seed);
  }
};

fs::path prepare_out(const std::string& out, const RunConfig& cfg) {
  fs::path dir(out);
  fs::create_directories(dir);
  io::write_text(dir / "config.json", to_json(cfg).dump(2));
  return dir;
}

// Cases of a corpus split, or the corpus directory itself when it holds cases.
std::vector<fs::path> split_cases(const fs::path& corpus, const std::string& split) {
  if (fs::exists(corpus / "meta.json")) return {corpus};
  if (fs::is_directory(corpus / split)) return io::list_cases(corpus / split);
  return io::list_cases(corpus);
}

io::RgbImage labelled_gray(const Plane& p) { return io::window_gray(p, 0.0, 1.0); }

// ---------------------------------------------------------------- simulate
int cmd_simulate(const Common& c) {
  const RunConfig cfg = c.resolve();
  const fs::path out = prepare_out(c.out, cfg);
  write_corpus(cfg, out, c.jobs);
  const auto pool = split_mask_pool(cfg.corpus);
  std::cout << "wrote " << cfg.corpus.n_train << " train / " << cfg.corpus.n_test << " test cases to " << out.string()
            << " (masks: " << pool.train.size() << " train, " << pool.test.size() << " test)\n";
  return kOk;
}

// ---------------------------------------------------------------- solve
int cmd_solve(const Common& c, const std::string& case_dir, const std::optional<std::string>& ckpt) {
  const RunConfig cfg = c.resolve();
  const auto bundle = io::read_case(case_dir);
  const MaskedScene& scene = bundle.scene;

  Dictionary D(cfg.model.p, cfg.model.d);
  if (ckpt) {
    D = acdnet::load_checkpoint(*ckpt).net.dictionary();
  } else {
    D = acdnet::Network(cfg.model).dictionary();
  }
  const int N = cfg.model.N;
  const double S = bank_spectral_peak(D);
  ClassicalProxConfig prox = cfg.solver.prox;
  prox.steps.eta1 = cfg.solver.eta1.value_or(1.0 / (2.0 * S));
  prox.steps.eta2 = cfg.solver.eta2.value_or(1.0 / (2.0 * N * S));
  prox.steps.eta3 = cfg.solver.eta3.value_or(0.5);

  SolverState init;
  std::mt19937_64 rng(derive_seed(cfg.seed, 17));
  std::normal_distribution<double> G(0.0, 1.0);
  Eigen::MatrixXd K0(D.count(), N);
  for (Eigen::Index i = 0; i < K0.size(); ++i) K0.data()[i] = G(rng);
  init.K = prox_K(K0).K;
  init.M = CodeTensor(scene.height(), scene.width(), N);
  init.X = scene.X_li ? *scene.X_li : scene.Y;

  const fs::path out = prepare_out(c.out, cfg);
  const SolverState st = run_solver(scene, D, init, prox);
  io::write_raw(out / "X.raw", st.X);
  json meta{{"height", scene.height()}, {"width", scene.width()}, {"method", "solver"},
            {"iterations", st.iters_run}, {"degenerate_columns", st.degenerate_columns},
            {"eta", {prox.steps.eta1, prox.steps.eta2, prox.steps.eta3}}};
  if (bundle.meta.contains("case_id")) meta["case_id"] = bundle.meta["case_id"];
  io::write_text(out / "meta.json", meta.dump(2));
  write_trace_csv(out / "trace.csv", st.trace_rows);

  std::vector<io::RgbImage> panel{labelled_gray(scene.Y)};
  if (scene.X_li) panel.push_back(labelled_gray(*scene.X_li));
  panel.push_back(labelled_gray(st.X));
  if (scene.X_gt) panel.push_back(labelled_gray(*scene.X_gt));
  io::write_png(out / "panel.png", io::hconcat(panel));

  const double f0 = st.trace_rows.front().fidelity, f1 = st.trace_rows.back().fidelity;
  std::printf("iterations %d  fidelity %.6g -> %.6g\n", st.iters_run, f0, f1);
  if (scene.X_gt) {
    std::printf("masked PSNR: input %.2f dB, solver %.2f dB\n", masked_psnr(scene.Y, *scene.X_gt, scene.I),
                masked_psnr(st.X, *scene.X_gt, scene.I));
  }
  return kOk;
}

// ---------------------------------------------------------------- train
int cmd_train(const Common& c, const std::string& corpus, const std::optional<std::string>& resume) {
  const RunConfig cfg = c.resolve();
  const auto paths = split_cases(corpus, "train");
  if (paths.empty()) throw MissingInputError("no training cases under " + corpus);
  std::vector<MaskedScene> all;
  for (const auto& p : paths) all.push_back(io::read_case(p).scene);
  const int n_val = static_cast<int>(std::ceil(cfg.val_fraction * static_cast<double>(all.size())));
  const int n_train = static_cast<int>(all.size()) - (n_val < static_cast<int>(all.size()) ? n_val : 0);
  std::vector<MaskedScene> train_set(all.begin(), all.begin() + n_train);
  std::vector<MaskedScene> val_set(all.begin() + n_train, all.end());

  acdnet::Network net;
  std::optional<acdnet::AdamState> opt;
  if (resume) {
    auto ck = acdnet::load_checkpoint(*resume);
    net = std::move(ck.net);
    opt = std::move(ck.optimizer);
  } else {
    net = acdnet::Network(cfg.model);
  }

  const fs::path out = prepare_out(c.out, cfg);
  auto res = acdnet::train(net, train_set, val_set, cfg.train, opt ? &*opt : nullptr,
                           [](const acdnet::TrainLogRow& r) {
                             if (r.step % 10 == 0 || !std::isnan(r.val_psnr)) {
                               std::printf("step %ld epoch %d loss %.6g", r.step, r.epoch, r.loss);
                               if (!std::isnan(r.val_psnr)) std::printf(" val_psnr %.3f", r.val_psnr);
                               std::printf("\n");
                               std::fflush(stdout);
                             }
                           });
  acdnet::save_checkpoint(out / "checkpoint.bin", net, &res.optimizer,
                          {{"train.cases", std::to_string(train_set.size())},
                           {"train.val_cases", std::to_string(val_set.size())},
                           {"seed", std::to_string(cfg.seed)}});
  acdnet::write_train_log(out / "train_log.csv", res.log);
  std::vector<double> losses;
  for (const auto& r : res.log) losses.push_back(r.loss);
  io::write_png(out / "loss_curve.png", io::plot_series(losses, 480, 320, true));
  std::printf("trained %zu steps, %zu parameters\n", res.log.size(), net.param_count());
  return kOk;
}

// ---------------------------------------------------------------- reconstruct
int cmd_reconstruct(const Common& c, const std::string& ckpt, const std::optional<std::string>& case_dir,
                    const std::optional<std::string>& corpus) {
  const RunConfig cfg = c.resolve();
  if (!case_dir && !corpus) throw ConfigError("reconstruct needs --case or --corpus");
  auto ck = acdnet::load_checkpoint(ckpt);
  const auto paths = case_dir ? std::vector<fs::path>{fs::path(*case_dir)} : split_cases(*corpus, "test");
  if (paths.empty()) throw MissingInputError("no cases to reconstruct");
  const fs::path out = prepare_out(c.out, cfg);
  parallel_for(static_cast<int>(paths.size()), c.jobs, [&](int k) {
    const auto b = io::read_case(paths[k]);
    const std::string id = b.meta.value("case_id", paths[k].filename().string());
    const auto imgs = acdnet::reconstruct_stages(ck.net, b.scene);
    const fs::path dir = out / id;
    fs::create_directories(dir);
    io::write_raw(dir / "X.raw", imgs.X.back());
    std::vector<io::RgbImage> frames;
    for (const auto& x : imgs.X) frames.push_back(labelled_gray(x));
    io::write_png(dir / "gallery.png", io::hconcat(frames));
    json meta{{"case_id", id}, {"height", b.scene.height()}, {"width", b.scene.width()},
              {"method", "acdnet"}, {"stages", static_cast<int>(imgs.X.size()) - 1}};
    io::write_text(dir / "meta.json", meta.dump(2));
  });
  std::printf("reconstructed %zu case(s) into %s\n", paths.size(), out.string().c_str());
  return kOk;
}

// ---------------------------------------------------------------- eval
int cmd_eval(const Common& c, const std::string& corpus, const std::optional<std::string>& recon,
             bool include_reference) {
  const RunConfig cfg = c.resolve();
  const auto paths = split_cases(corpus, "test");
  if (paths.empty()) throw MissingInputError("no cases under " + corpus);
  std::vector<io::CaseBundle> cases;
  for (const auto& p : paths) cases.push_back(io::read_case(p));

  // Five groups by metal area, g1 = largest.
  std::vector<int> order(cases.size());
  std::iota(order.begin(), order.end(), 0);
  auto area = [&](int i) { return (1.0 - cases[i].scene.I).sum(); };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return area(a) > area(b); });
  std::vector<std::string> group(cases.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    group[order[r]] = "g" + std::to_string(1 + static_cast<int>(r * 5 / order.size()));
  }

  std::vector<MetricRow> rows;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& s = cases[i].scene;
    if (!s.X_gt) throw MissingInputError("case " + paths[i].string() + " has no ground truth");
    const std::string id = cases[i].meta.value("case_id", paths[i].filename().string());
    auto add = [&](const std::string& method, const Plane& x) {
      const auto r = evaluate(x, *s.X_gt, s.I);
      rows.push_back({id, method, group[i], r.psnr_db, r.ssim, psnr(x, *s.X_gt)});
    };
    if (include_reference) add("reference", *s.X_gt);
    add("input", s.Y);
    if (s.X_li) add("li", *s.X_li);
    if (recon) {
      const fs::path rp = fs::path(*recon) / id / "X.raw";
      const auto rm = io::read_json(fs::path(*recon) / id / "meta.json");
      add(rm.value("method", std::string("recon")), io::read_raw(rp, s.height(), s.width()));
    }
  }
  const fs::path out = prepare_out(c.out, cfg);
  write_metric_csv(out / "metrics.csv", rows);

  std::map<std::string, std::pair<double, int>> mean_psnr, mean_ssim;
  std::vector<std::string> methods;
  for (const auto& r : rows) {
    if (!mean_psnr.count(r.method)) methods.push_back(r.method);
    auto& p = mean_psnr[r.method];
    p.first += r.psnr;
    ++p.second;
    auto& q = mean_ssim[r.method];
    q.first += r.ssim;
    ++q.second;
  }
  std::ofstream sum(out / "summary.csv");
  sum << "method,mean_psnr,mean_ssim,cases\n";
  for (const auto& m : methods) {
    const double mp = mean_psnr[m].first / mean_psnr[m].second;
    const double ms = mean_ssim[m].first / mean_ssim[m].second;
    sum << m << ',' << mp << ',' << ms << ',' << mean_psnr[m].second << '\n';
    std::printf("%-10s PSNR %8.3f dB  SSIM %.4f  (%d cases)\n", m.c_str(), mp, ms, mean_psnr[m].second);
  }
  return kOk;
}

// ---------------------------------------------------------------- bench
std::string cpu_model() {
  std::ifstream is("/proc/cpuinfo");
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto p = line.find(':');
      if (p != std::string::npos) return line.substr(p + 2);
    }
  }
  return "unknown";
}

int cmd_bench(const Common& c, const std::string& ckpt) {
  RunConfig cfg = c.resolve();
  auto ck = acdnet::load_checkpoint(ckpt);
  if (cfg.bench.image_size > 0) cfg.sim.image_size = cfg.bench.image_size;
  const auto cs = make_case(cfg, "test", 0);
  std::vector<double> times;
  acdnet::reconstruct(ck.net, cs.scene);  // warm-up
  for (int r = 0; r < cfg.bench.runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    acdnet::reconstruct(ck.net, cs.scene);
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / times.size();
  double var = 0.0;
  for (double t : times) var += (t - mean) * (t - mean);
  const double sd = std::sqrt(var / (times.size() - 1));
  const std::size_t params = ck.net.param_count();
  constexpr long kReferenceParams = 1602809;
  json report{{"param_count", params},
              {"reference_param_count", kReferenceParams},
              {"param_count_diff", static_cast<long>(params) - kReferenceParams},
              {"image_size", cfg.sim.image_size},
              {"runs", cfg.bench.runs},
              {"mean_seconds", mean},
              {"sd_seconds", sd},
              {"cpu", cpu_model()},
              {"hardware_threads", std::thread::hardware_concurrency()}};
  if (!c.out.empty()) {
    const fs::path out = prepare_out(c.out, cfg);
    io::write_text(out / "bench.json", report.dump(2));
  }
  std::printf("parameters %zu (reference 1602809, diff %+ld)\n", params, static_cast<long>(params) - kReferenceParams);
  std::printf("reconstruct %dx%d: %.4f +- %.4f s over %d runs\n", cfg.sim.image_size, cfg.sim.image_size, mean, sd,
              cfg.bench.runs);
  std::printf("cpu: %s\n", cpu_model().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted convolutional dictionary metal-artifact reduction"};
  app.require_subcommand(1);

  Common c_sim, c_solve, c_train, c_rec, c_eval, c_bench;
  std::string case_dir, corpus, ckpt, eval_corpus;
  std::optional<std::string> solve_ckpt, resume, rec_case, rec_corpus_opt, recon;
  bool include_reference = false;

  auto* sim = app.add_subcommand("simulate", "Simulate a paired train/test corpus");
  c_sim.attach(sim);

  auto* solve = app.add_subcommand("solve", "Run the classical proximal-gradient solver on one case");
  c_solve.attach(solve);
  solve->add_option("--case", case_dir, "Case bundle directory")->required();
  solve->add_option("--checkpoint", solve_ckpt, "Take the dictionary from a trained checkpoint");

  auto* train = app.add_subcommand("train", "Train the unrolled network");
  c_train.attach(train);
  train->add_option("--corpus", corpus, "Corpus directory (uses its train/ split)")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint (parameters and optimizer state)");

  auto* rec = app.add_subcommand("reconstruct", "Apply a trained network");
  c_rec.attach(rec);
  rec->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  rec->add_option("--case", rec_case, "Single case bundle");
  rec->add_option("--corpus", rec_corpus_opt, "Corpus directory (uses its test/ split)");

  auto* ev = app.add_subcommand("eval", "Masked PSNR / SSIM tables");
  c_eval.attach(ev);
  ev->add_option("--corpus", eval_corpus, "Corpus directory (uses its test/ split)")->required();
  ev->add_option("--recon", recon, "Output directory of reconstruct");
  ev->add_flag("--include-reference", include_reference, "Also score the ground truth against itself");

  auto* bench = app.add_subcommand("bench", "Timing and parameter count");
  c_bench.attach(bench, false);
  bench->add_option("--checkpoint", ckpt, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) return cmd_simulate(c_sim);
    if (*solve) return cmd_solve(c_solve, case_dir, solve_ckpt);
    if (*train) return cmd_train(c_train, corpus, resume);
    if (*rec) return cmd_reconstruct(c_rec, ckpt, rec_case, rec_corpus_opt);
    if (*ev) return cmd_eval(c_eval, eval_corpus, recon, include_reference);
    if (*bench) return cmd_bench(c_bench, ckpt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const MissingInputError& e) {
    std::cerr << "missing input: " << e.what() << '\n';
    return kMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
