#pragma once
// Ablation and latency benchmarks shared by the CLI and the acceptance suite.

#include <iosfwd>
#include <string>
#include <vector>

#include "fmamba/metrics.hpp"
#include "fmamba/train.hpp"

namespace fmamba {

enum class Toggle { NoCmca, Planar2d };

Toggle parse_toggle(const std::string& s);
std::string toggle_name(Toggle t);
/// Throws ValidationError for planar2d on a 2D config.
TrainConfig apply_toggle(TrainConfig cfg, Toggle t);

/// Fuses every pair and scores it.
std::vector<MetricRow> evaluate_set(const FusionModel& model, const std::vector<ImagePair>& pairs);

struct AblationArm {
  std::int64_t param_count = 0;
  TrainLog log;
  std::vector<MetricSummary> metrics;
};

struct AblationReport {
  int dims = 2;
  Toggle toggle = Toggle::NoCmca;
  AblationArm base, toggled;
};

/// Trains base and toggled variants with identical seeds and data, then
/// evaluates both on the test partition (the train partition when no test
/// pairs are configured).
AblationReport run_ablation(const TrainConfig& base, Toggle t, std::ostream* progress = nullptr);

/// One row per metric: metric,base,toggled,delta with delta = toggled - base.
void write_ablation_table(std::ostream& os, const AblationReport& r);

struct BenchResult {
  std::int64_t size = 0;
  int reps = 0;
  Real mean_ms = 0.0, std_ms = 0.0;
  std::int64_t param_count = 0;
};

/// Latency of fusing one synthetic pair of edge `size`; warmup runs are
/// excluded from the statistics.
BenchResult bench_fuse(FusionModel& model, std::int64_t size, int reps = 10, int warmup = 1);

}  // namespace fmamba
