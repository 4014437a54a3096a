#include "fmamba/params.hpp"

#include <algorithm>

namespace fmamba {

std::int64_t count_params(const NamedParams& params) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params) n += static_cast<std::int64_t>(t->numel());
  return n;
}

void set_requires_grad(const NamedParams& params, bool on) {
  for (const auto& [name, t] : params) t->set_requires_grad(on);
}

void fill_params(const NamedParams& params, Real value) {
  for (const auto& [name, t] : params) {
    auto d = t->mutable_data();
    std::fill(d.begin(), d.end(), value);
  }
}

}  // namespace fmamba
