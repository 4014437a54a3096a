#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba {

/// Named, mutable view of a parameter set in a stable order.
using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

std::int64_t count_params(const NamedParams& params);
void set_requires_grad(const NamedParams& params, bool on);
void fill_params(const NamedParams& params, Real value);

}  // namespace fmamba
