#pragma once
// Shared helpers for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "fmamba/ops.hpp"
#include "fmamba/tape.hpp"
#include "fmamba/tensor.hpp"

namespace fmamba::testing {

/// Uniform values in [lo, hi).
inline Tensor uniform(const Shape& shape, std::uint64_t seed, Real lo = -1.0, Real hi = 1.0) {
  Rng rng(seed);
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& e : v) e = lo + (hi - lo) * rng.uniform();
  return Tensor(shape, std::move(v));
}

/// Values with magnitude in [0.1, 1] and random sign, away from kinks at 0.
inline Tensor away_from_zero(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& e : v) {
    const Real m = 0.1 + 0.9 * rng.uniform();
    e = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor(shape, std::move(v));
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(),
                    [](Real p, Real q) { return std::memcmp(&p, &q, sizeof(Real)) == 0; });
}

inline Real max_abs_diff(const Tensor& a, const Tensor& b) {
  Real m = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

struct GradCheckResult {
  bool ok = true;
  Real worst_ratio = 0.0;  // max over checked elements of |a - n| / tolerance
  std::string detail;
};

/// Central finite differences against the tape gradient.
///
/// The scalar objective is sum(f(inputs) * r) for a fixed random r, so every
/// output element contributes. At most `max_probe` entries per input are
/// perturbed. An element passes when |analytic - numeric| <= rtol *
/// max(|analytic|, |numeric|, floor) where floor = 1e-2 * the largest
/// numeric magnitude seen for that input (protects near-zero entries).
inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, Real rtol, std::uint64_t seed = 7,
                                 std::size_t max_probe = 24, Real step = 1e-5) {
  GradCheckResult res;
  for (auto& t : inputs) t = t.clone();
  const Tensor probe_out = f(inputs);
  const Tensor r = uniform(probe_out.shape(), seed ^ 0x9e37, 0.5, 1.5);
  auto objective = [&](const std::vector<Tensor>& in) {
    return ops::sum(ops::mul(f(in), r));
  };

  for (auto& t : inputs) t.set_requires_grad(true);
  GradTape tape;
  Tensor out;
  {
    TapeScope scope(tape);
    out = objective(inputs);
  }
  const Gradients g = backward(tape, out);
  for (auto& t : inputs) t.set_requires_grad(false);

  Rng pick(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = g.of(inputs[k]);
    const std::size_t n = inputs[k].numel();
    std::vector<std::size_t> idx;
    if (n <= max_probe) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      for (std::size_t i = 0; i < max_probe; ++i) idx.push_back(static_cast<std::size_t>(pick.below(n)));
    }
    std::vector<Real> numeric(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      auto data = inputs[k].mutable_data();
      const Real orig = data[idx[j]];
      const Real h = step * std::max<Real>(1.0, std::abs(orig));
      data[idx[j]] = orig + h;
      const Real fp = objective(inputs).item();
      data[idx[j]] = orig - h;
      const Real fm = objective(inputs).item();
      data[idx[j]] = orig;
      numeric[j] = (fp - fm) / (2.0 * h);
    }
    Real scale = 0.0;
    for (Real v : numeric) scale = std::max(scale, std::abs(v));
    const Real floor = 1e-2 * scale + 1e-12;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Real a = analytic.data()[idx[j]];
      const Real tol = rtol * std::max({std::abs(a), std::abs(numeric[j]), floor});
      const Real ratio = std::abs(a - numeric[j]) / tol;
      if (ratio > res.worst_ratio) res.worst_ratio = ratio;
      if (ratio > 1.0 && res.ok) {
        res.ok = false;
        res.detail = "input " + std::to_string(k) + " element " + std::to_string(idx[j]) +
                     ": analytic " + std::to_string(a) + " numeric " + std::to_string(numeric[j]);
      }
    }
  }
  return res;
}

}  // namespace fmamba::testing
