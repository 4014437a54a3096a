#include "fmamba/optim.hpp"

#include <cmath>

namespace fmamba {

void AdamState::reset(const NamedParams& params) {
  step = 0;
  m.assign(params.size(), {});
  v.assign(params.size(), {});
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].second->numel(), 0.0);
    v[i].assign(params[i].second->numel(), 0.0);
  }
}

void adam_step(const NamedParams& params, const std::vector<Tensor>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (grads.size() != params.size()) throw ShapeError("adam_step: gradient count does not match parameters");
  if (state.m.size() != params.size()) state.reset(params);
  ++state.step;
  const Real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Real>(state.step));
  const Real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Real>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].second;
    if (grads[i].shape() != p.shape()) {
      throw ShapeError("adam_step: gradient for " + params[i].first + " has shape " + shape_str(grads[i].shape()) +
                       ", parameter has " + shape_str(p.shape()));
    }
    auto w = p.mutable_data();
    const auto g = grads[i].data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const Real mhat = m[k] / bc1;
      const Real vhat = v[k] / bc2;
      w[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace fmamba
