#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include "fmamba/checkpoint.hpp"
#include "fmamba/data.hpp"

namespace fmamba {

struct StepRecord {
  std::int64_t step = 0;  // 1-based
  Real total = 0.0, pixel = 0.0, grad = 0.0, ssim = 0.0;
  Real wall_ms = 0.0;  // not part of the determinism contract
};
using TrainLog = std::vector<StepRecord>;

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const StepRecord& r);

struct Datasets {
  std::vector<ImagePair> train, validation, test;
};

/// Materializes the configured source and split. With all split counts
/// zero every pair goes to train.
Datasets load_datasets(const TrainConfig& cfg);

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<ImagePair> data);
  /// Continues from a checkpoint; the data must be what the original run used.
  Trainer(TrainState state, std::vector<ImagePair> data);

  /// Runs one Adam step. Throws NumericalError on a non-finite loss or gradient.
  StepRecord step();
  /// Runs `n` steps, checkpointing on the configured schedule.
  TrainLog run(std::int64_t n, const std::function<void(const StepRecord&)>& on_step = {});

  TrainState& state() { return state_; }
  FusionModel& model() { return state_.model; }
  std::int64_t steps_done() const { return state_.adam.step; }
  void save(const std::string& path) { save_checkpoint(path, state_); }

 private:
  void check_data() const;

  TrainState state_;
  std::vector<ImagePair> data_;
};

/// Fuses one pair with a [1, ...] -> [1, 1, ...] batch and returns [1, ...].
Tensor fuse_pair(const Tensor& a, const Tensor& b, const FusionModel& model);

}  // namespace fmamba
