#pragma once

#include <cstdint>
#include <vector>

#include "fmamba/config.hpp"
#include "fmamba/params.hpp"

namespace fmamba {

struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<Real>> m, v;  // aligned with the parameter list

  void reset(const NamedParams& params);
};

/// One bias-corrected Adam update in place. `grads[i]` pairs with `params[i]`.
void adam_step(const NamedParams& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace fmamba
