#include "fmamba/experiments.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

namespace fmamba {

Toggle parse_toggle(const std::string& s) {
  if (s == "no_cmca") return Toggle::NoCmca;
  if (s == "planar2d") return Toggle::Planar2d;
  throw ValidationError("unknown toggle '" + s + "' (expected no_cmca or planar2d)");
}

std::string toggle_name(Toggle t) { return t == Toggle::NoCmca ? "no_cmca" : "planar2d"; }

TrainConfig apply_toggle(TrainConfig cfg, Toggle t) {
  if (t == Toggle::NoCmca) {
    cfg.model.cmca_enabled = false;
  } else {
    if (cfg.model.dims != 3) throw ValidationError("the planar2d ablation only applies to 3D configs");
    cfg.model.scan_strategy = ScanStrategy::Planar2d;
  }
  cfg.validate();
  return cfg;
}

std::vector<MetricRow> evaluate_set(const FusionModel& model, const std::vector<ImagePair>& pairs) {
  std::vector<MetricRow> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) {
    const Tensor fused = fuse_pair(p.a, p.b, model);
    rows.push_back(evaluate_pair(p.id, p.a, p.b, fused, model.cfg.dims));
  }
  return rows;
}

AblationReport run_ablation(const TrainConfig& base, Toggle t, std::ostream* progress) {
  AblationReport report;
  report.dims = base.model.dims;
  report.toggle = t;
  const TrainConfig toggled = apply_toggle(base, t);
  const Datasets data = load_datasets(base);
  const std::vector<ImagePair>& eval_set = data.test.empty() ? data.train : data.test;
  auto arm = [&](const TrainConfig& cfg, const char* label) {
    TrainConfig c = cfg;
    c.checkpoint_every = 0;
    Trainer trainer(c, data.train);
    AblationArm a;
    a.param_count = trainer.model().param_count();
    a.log = trainer.run(c.steps);
    a.metrics = aggregate(evaluate_set(trainer.model(), eval_set), metric_names(c.model.dims).size());
    if (progress) {
      *progress << label << ": params=" << a.param_count << " final_loss=" << a.log.back().total << '\n';
    }
    return a;
  };
  report.base = arm(base, "base");
  report.toggled = arm(toggled, toggle_name(t).c_str());
  return report;
}

void write_ablation_table(std::ostream& os, const AblationReport& r) {
  os << "metric,base,toggled,delta\n";
  const auto names = metric_names(r.dims);
  for (std::size_t m = 0; m < names.size(); ++m) {
    const Real b = r.base.metrics.at(m).mean, t = r.toggled.metrics.at(m).mean;
    os << names[m] << ',' << format_metric(b) << ',' << format_metric(t) << ',' << format_metric(t - b) << '\n';
  }
  os << "param_count," << r.base.param_count << ',' << r.toggled.param_count << ','
     << (r.toggled.param_count - r.base.param_count) << '\n';
}

BenchResult bench_fuse(FusionModel& model, std::int64_t size, int reps, int warmup) {
  if (reps < 1) throw ValidationError("bench needs at least one repetition");
  const ImagePair p = synth_pair(static_cast<std::uint64_t>(size), model.cfg.dims, size);
  for (int i = 0; i < warmup; ++i) (void)fuse_pair(p.a, p.b, model);
  std::vector<Real> ms;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)fuse_pair(p.a, p.b, model);
    ms.push_back(std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  BenchResult r;
  r.size = size;
  r.reps = reps;
  r.param_count = model.param_count();
  for (Real v : ms) r.mean_ms += v;
  r.mean_ms /= reps;
  for (Real v : ms) r.std_ms += (v - r.mean_ms) * (v - r.mean_ms);
  r.std_ms = std::sqrt(r.std_ms / reps);
  return r;
}

}  // namespace fmamba
