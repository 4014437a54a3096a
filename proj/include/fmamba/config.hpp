#pragma once
// Flat `key = value` experiment configuration.

#include <cstdint>
#include <map>
#include <string>

#include "fmamba/data.hpp"
#include "fmamba/losses.hpp"
#include "fmamba/model.hpp"

namespace fmamba {

struct AdamConfig {
  Real lr = 1e-4;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

enum class DataSource { Synthetic, Manifest };

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::string manifest;  // relative paths resolve against the config file
  // Synthetic source.
  int synth_count = 8;
  std::int64_t synth_size = 64;
  std::uint64_t synth_seed = 1;
  // Dataset split; the model trains on the train partition.
  SplitCounts split;
  std::uint64_t split_seed = 1;
};

struct TrainConfig {
  ModelConfig model;
  LossWeights loss;
  AdamConfig adam;
  int batch_size = 0;  // 0: 4 for 2D, 1 for 3D
  std::int64_t steps = 1000;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_every = 0;
  std::string checkpoint_path = "fmamba.ckpt";
  std::string log_path;  // per-step CSV, empty to skip
  DataConfig data;

  int effective_batch_size() const { return batch_size > 0 ? batch_size : (model.dims == 3 ? 1 : 4); }
  void validate() const;
};

/// Ordered key/value view used for parsing and canonical output.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);

TrainConfig train_config_from(const KeyValues& kv);
KeyValues to_key_values(const TrainConfig& cfg);

/// Canonical text: keys sorted, one `key = value` per line.
std::string to_text(const TrainConfig& cfg);
TrainConfig parse_train_config(const std::string& text);

/// Reads a config file. Relative manifest, checkpoint and log paths are
/// resolved against the file's directory.
TrainConfig load_train_config(const std::string& path);
void save_train_config(const std::string& path, const TrainConfig& cfg);

}  // namespace fmamba
