#pragma once
// FMCK1 checkpoints: config text, named parameters, Adam moments and the
// batch-sampling RNG, so a resumed run continues bit-exactly.

#include <string>

#include "fmamba/config.hpp"
#include "fmamba/model.hpp"
#include "fmamba/optim.hpp"

namespace fmamba {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainState {
  TrainConfig cfg;
  FusionModel model;
  AdamState adam;
  Rng rng{0};
};

/// Written to a temporary file and renamed into place.
void save_checkpoint(const std::string& path, TrainState& state);
TrainState load_checkpoint(const std::string& path);

}  // namespace fmamba
