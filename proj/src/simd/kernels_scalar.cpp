#include "fmamba/simd/kernels.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "exp_constants.hpp"

namespace fmamba::simd {
namespace {

void add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void div(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
}
void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i];
}
void axpy_strided(double alpha, const double* x, std::size_t stride, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i * stride];
}
void affine(double alpha, double beta, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = alpha * x[i] + beta;
}

double dot(const double* a, const double* b, std::size_t n) {
  std::array<double, 4> acc{0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (std::size_t l = 0; l < 4; ++l) acc[l] = acc[l] + a[i + l] * b[i + l];
  }
  double r = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; i < n; ++i) r = r + a[i] * b[i];
  return r;
}

double sum(const double* a, std::size_t n) {
  std::array<double, 4> acc{0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (std::size_t l = 0; l < 4; ++l) acc[l] = acc[l] + a[i + l];
  }
  double r = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  for (; i < n; ++i) r = r + a[i];
  return r;
}

void exp_kernel(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = exp_reference(x[i]);
}

void sigmoid(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + exp_reference(-x[i]));
}

void silu(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * (1.0 / (1.0 + exp_reference(-x[i])));
}

void leaky_relu(double slope, const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void scan_forward(const ScanForwardArgs& a) {
  const std::size_t C = a.channels;
  const std::size_t N = a.state;
  const std::size_t seg = a.segment == 0 ? a.length : a.segment;
  std::vector<double> local;
  if (a.h_all == nullptr) local.assign(N * C, 0.0);
  std::vector<double> dbu(C);

  for (std::size_t t = 0; t < a.length; ++t) {
    const double* u = a.u + t * C;
    const double* dl = a.delta + t * C;
    const double* bt = a.b + t * N;
    const double* ct = a.c + t * N;
    double* h = a.h_all ? a.h_all + t * N * C : local.data();
    const bool fresh = (t % seg) == 0;
    const double* hp = nullptr;
    if (a.h_all) {
      hp = fresh ? nullptr : a.h_all + (t - 1) * N * C;
    } else {
      if (fresh) std::fill(local.begin(), local.end(), 0.0);
      hp = local.data();
    }
    for (std::size_t i = 0; i < C; ++i) dbu[i] = dl[i] * u[i];
    for (std::size_t s = 0; s < N; ++s) {
      const double* arow = a.a_t + s * C;
      for (std::size_t i = 0; i < C; ++i) {
        const double decay = exp_reference(dl[i] * arow[i]);
        const double prev = hp ? hp[s * C + i] : 0.0;
        h[s * C + i] = decay * prev + dbu[i] * bt[s];
      }
    }
    double* y = a.y + t * C;
    for (std::size_t i = 0; i < C; ++i) y[i] = a.d[i] * u[i];
    for (std::size_t s = 0; s < N; ++s) {
      for (std::size_t i = 0; i < C; ++i) y[i] = y[i] + ct[s] * h[s * C + i];
    }
  }
}

// Four-lane reduction over channels, same combination order as the
// vector kernels.
double lane_sum(const double* v, std::size_t n) { return sum(v, n); }

void scan_backward(const ScanBackwardArgs& g) {
  const ScanForwardArgs& a = g.fwd;
  const std::size_t C = a.channels;
  const std::size_t N = a.state;
  const std::size_t seg = a.segment == 0 ? a.length : a.segment;
  std::vector<double> gh(N * C, 0.0);
  std::vector<double> dbu(C);
  std::vector<double> tmp(C);

  for (std::size_t tt = a.length; tt-- > 0;) {
    if ((tt + 1) % seg == 0) std::fill(gh.begin(), gh.end(), 0.0);
    const double* u = a.u + tt * C;
    const double* dl = a.delta + tt * C;
    const double* bt = a.b + tt * N;
    const double* ct = a.c + tt * N;
    const double* gy = g.grad_y + tt * C;
    const double* h = g.h_all + tt * N * C;
    const double* hp = (tt % seg == 0) ? nullptr : g.h_all + (tt - 1) * N * C;
    double* gu = g.grad_u + tt * C;
    double* gdl = g.grad_delta + tt * C;
    double* gb = g.grad_b + tt * N;
    double* gc = g.grad_c + tt * N;

    for (std::size_t i = 0; i < C; ++i) {
      gu[i] = gu[i] + gy[i] * a.d[i];
      g.grad_d[i] = g.grad_d[i] + gy[i] * u[i];
      dbu[i] = dl[i] * u[i];
    }
    for (std::size_t s = 0; s < N; ++s) {
      for (std::size_t i = 0; i < C; ++i) tmp[i] = gy[i] * h[s * C + i];
      gc[s] = gc[s] + lane_sum(tmp.data(), C);
      for (std::size_t i = 0; i < C; ++i) gh[s * C + i] = gh[s * C + i] + gy[i] * ct[s];
    }
    for (std::size_t s = 0; s < N; ++s) {
      const double* arow = a.a_t + s * C;
      double* garow = g.grad_a_t + s * C;
      double* ghs = gh.data() + s * C;
      for (std::size_t i = 0; i < C; ++i) {
        const double decay = exp_reference(dl[i] * arow[i]);
        const double prev = hp ? hp[s * C + i] : 0.0;
        const double dh_prev = decay * prev;
        gdl[i] = gdl[i] + ghs[i] * (arow[i] * dh_prev + bt[s] * u[i]);
        garow[i] = garow[i] + ghs[i] * (dl[i] * dh_prev);
        tmp[i] = ghs[i] * dbu[i];
        gu[i] = gu[i] + ghs[i] * (dl[i] * bt[s]);
        ghs[i] = ghs[i] * decay;
      }
      gb[s] = gb[s] + lane_sum(tmp.data(), C);
    }
  }
}

}  // namespace

double exp_reference(double x) {
  using namespace exp_detail;
  x = std::min(std::max(x, kExpMin), kExpMax);
  const double k = std::nearbyint(x * kLog2e);
  const double r = (x - k * kLn2Hi) - k * kLn2Lo;
  double p = kExpCoeffs[0];
  for (std::size_t j = 1; j < kExpCoeffs.size(); ++j) p = p * r + kExpCoeffs[j];
  const std::uint64_t bits = static_cast<std::uint64_t>(static_cast<std::int64_t>(k) + 1023) << 52;
  double scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return p * scale;
}

const KernelTable& scalar_table() {
  static const KernelTable t{
      Backend::Scalar, "scalar", add, sub, mul, div, axpy, axpy_strided, affine, dot, sum,
      exp_kernel, sigmoid, silu, leaky_relu, scan_forward, scan_backward,
  };
  return t;
}

}  // namespace fmamba::simd
