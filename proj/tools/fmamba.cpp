// Command-line front end: train, fuse, eval, ablate, bench, synth.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fmamba/experiments.hpp"
#include "fmamba/image_io.hpp"
#include "fmamba/tensor_io.hpp"

using namespace fmamba;

namespace {

void apply_thread_cap() {
  const char* env = std::getenv("FMAMBA_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ValidationError(std::string("FMAMBA_THREADS must be a positive integer, got '") + env + "'");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

int cmd_train(const std::string& config_path, const std::string& resume) {
  TrainConfig cfg = load_train_config(config_path);
  Datasets data = load_datasets(cfg);
  std::unique_ptr<Trainer> trainer;
  if (resume.empty()) {
    trainer = std::make_unique<Trainer>(cfg, data.train);
  } else {
    TrainState st = load_checkpoint(resume);
    st.cfg.steps = cfg.steps;
    st.cfg.checkpoint_every = cfg.checkpoint_every;
    st.cfg.checkpoint_path = cfg.checkpoint_path;
    st.cfg.log_path = cfg.log_path;
    trainer = std::make_unique<Trainer>(std::move(st), data.train);
  }
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    const bool append = !resume.empty() && std::filesystem::exists(cfg.log_path);
    log.open(cfg.log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot open " + cfg.log_path);
    if (!append) write_log_header(log);
  }
  const std::int64_t remaining = cfg.steps - trainer->steps_done();
  std::printf("training %lld steps on %zu pairs, params=%lld\n", static_cast<long long>(std::max<std::int64_t>(remaining, 0)),
              data.train.size(), static_cast<long long>(trainer->model().param_count()));
  const std::int64_t report = std::max<std::int64_t>(1, cfg.steps / 20);
  trainer->run(remaining, [&](const StepRecord& r) {
    if (log.is_open()) write_log_row(log, r);
    if (r.step % report == 0 || r.step == cfg.steps) {
      std::printf("step %lld total=%.6g pixel=%.6g grad=%.6g ssim=%.6g (%.1f ms)\n", static_cast<long long>(r.step),
                  r.total, r.pixel, r.grad, r.ssim, r.wall_ms);
      std::fflush(stdout);
    }
  });
  trainer->save(cfg.checkpoint_path);
  std::printf("checkpoint written to %s\n", cfg.checkpoint_path.c_str());
  return 0;
}

int cmd_fuse(const std::string& ckpt, const std::string& a_path, const std::string& b_path, const std::string& out,
             bool keep_chroma) {
  TrainState st = load_checkpoint(ckpt);
  const int dims = st.cfg.model.dims;
  const LoadedImage a = load_image(a_path, dims), b = load_image(b_path, dims);
  if (a.luma.shape() != b.luma.shape()) {
    throw ShapeError("input shapes differ: " + a_path + " is " + shape_str(a.luma.shape()) + ", " + b_path + " is " +
                     shape_str(b.luma.shape()));
  }
  const LoadedImage* colour = b.cb.defined() ? &b : a.cb.defined() ? &a : nullptr;
  if (keep_chroma && !colour) {
    throw ValidationError("--keep-chroma needs a colour (PPM) input, but both inputs are grayscale");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor fused = fuse_pair(a.luma, b.luma, st.model);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (dims == 3) {
    save_fmt1(out, fused);
  } else if (keep_chroma) {
    write_pnm(out, ycbcr_to_rgb(fused, colour->cb, colour->cr));
  } else {
    write_pnm(out, fused);
  }
  std::printf("latency_ms=%.3f param_count=%lld\n", ms, static_cast<long long>(st.model.param_count()));
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest, const std::string& out) {
  TrainState st = load_checkpoint(ckpt);
  const int dims = st.cfg.model.dims;
  std::vector<ImagePair> pairs;
  for (const auto& e : read_manifest(manifest)) pairs.push_back(load_pair(e, dims));
  const auto rows = evaluate_set(st.model, pairs);
  std::ofstream os(out);
  if (!os) throw IoError("cannot open " + out + " for writing");
  write_report(os, rows, dims);
  const auto names = metric_names(dims);
  const auto agg = aggregate(rows, names.size());
  for (std::size_t m = 0; m < names.size(); ++m) {
    std::printf("%-8s %.6g +- %.6g\n", names[m].c_str(), agg[m].mean, agg[m].stddev);
  }
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& toggle, const std::string& out) {
  const TrainConfig cfg = load_train_config(config_path);
  const Toggle t = parse_toggle(toggle);
  apply_toggle(cfg, t);
  const AblationReport r = run_ablation(cfg, t, &std::cout);
  write_ablation_table(std::cout, r);
  if (!out.empty()) {
    std::ofstream os(out);
    if (!os) throw IoError("cannot open " + out + " for writing");
    write_ablation_table(os, r);
  }
  return 0;
}

int cmd_bench(const std::string& config_path, const std::vector<std::int64_t>& sizes, int reps) {
  const TrainConfig cfg = load_train_config(config_path);
  if (reps < 10) throw ValidationError("bench needs at least 10 repetitions");
  FusionModel model = build_model(cfg.model);
  std::printf("size,mean_ms,std_ms,reps,param_count\n");
  for (auto s : sizes) {
    const BenchResult r = bench_fuse(model, s, reps);
    std::printf("%lld,%.3f,%.3f,%d,%lld\n", static_cast<long long>(r.size), r.mean_ms, r.std_ms, r.reps,
                static_cast<long long>(r.param_count));
  }
  std::printf("reference (full-scale, other hardware): 2D 0.1 s / 4.05M params, 3D 7.3 s / 6.01M params\n");
  return 0;
}

int cmd_synth(std::uint64_t seed, int dims, int count, std::int64_t size, const std::string& out) {
  if (count < 1) throw ValidationError("--count must be >= 1");
  if (dims != 2 && dims != 3) throw ValidationError("--dims must be 2 or 3");
  std::filesystem::create_directories(out);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    const ImagePair p = synth_pair(derive_seed(seed, static_cast<std::uint64_t>(i)), dims, size);
    char id[32];
    std::snprintf(id, sizeof id, "pair%04d", i);
    const std::string ext = dims == 2 ? ".pgm" : ".fmt1";
    const std::string fa = std::string(id) + "_a" + ext, fb = std::string(id) + "_b" + ext;
    if (dims == 2) {
      write_pnm((std::filesystem::path(out) / fa).string(), p.a, 16);
      write_pnm((std::filesystem::path(out) / fb).string(), p.b, 16);
    } else {
      save_fmt1((std::filesystem::path(out) / fa).string(), p.a);
      save_fmt1((std::filesystem::path(out) / fb).string(), p.b);
    }
    entries.push_back({id, fa, fb, ""});
  }
  write_manifest((std::filesystem::path(out) / "manifest.tsv").string(), entries);
  std::printf("wrote %d pairs and manifest.tsv to %s\n", count, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal medical image fusion with state-space models"};
  app.require_subcommand(1);

  std::string config, ckpt, resume, a_path, b_path, out, manifest, toggle;
  bool keep_chroma = false;
  std::vector<std::int64_t> sizes{64, 128};
  int reps = 10, dims = 2, count = 1;
  std::uint64_t seed = 1;
  std::int64_t size = 0;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", config, "config file")->required();
  train->add_option("--resume", resume, "continue from a checkpoint");

  auto* fuse = app.add_subcommand("fuse", "fuse one image or volume pair");
  fuse->add_option("--ckpt", ckpt)->required();
  fuse->add_option("--a", a_path)->required();
  fuse->add_option("--b", b_path)->required();
  fuse->add_option("--out", out)->required();
  fuse->add_flag("--keep-chroma", keep_chroma, "reattach Cb/Cr of the colour input and write PPM");

  auto* eval = app.add_subcommand("eval", "score every pair in a manifest");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--out", out)->required();

  auto* ablate = app.add_subcommand("ablate", "train base and toggled variants and report metric deltas");
  ablate->add_option("--config", config)->required();
  ablate->add_option("--toggle", toggle)->required()->check(CLI::IsMember({"no_cmca", "planar2d"}));
  ablate->add_option("--out", out, "also write the delta table here");

  auto* bench = app.add_subcommand("bench", "fusion latency and parameter count");
  bench->add_option("--config", config)->required();
  bench->add_option("--sizes", sizes)->delimiter(',');
  bench->add_option("--reps", reps);

  auto* synth = app.add_subcommand("synth", "write synthetic pairs and a manifest");
  synth->add_option("--seed", seed)->required();
  synth->add_option("--dims", dims)->required();
  synth->add_option("--count", count)->required();
  synth->add_option("--size", size, "edge length (default 64 for 2D, 32 for 3D)");
  synth->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    apply_thread_cap();
    if (*train) return cmd_train(config, resume);
    if (*fuse) return cmd_fuse(ckpt, a_path, b_path, out, keep_chroma);
    if (*eval) return cmd_eval(ckpt, manifest, out);
    if (*ablate) return cmd_ablate(config, toggle, out);
    if (*bench) return cmd_bench(config, sizes, reps);
    if (*synth) return cmd_synth(seed, dims, count, size > 0 ? size : (dims == 3 ? 32 : 64), out);
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
