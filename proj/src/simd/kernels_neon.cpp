// NEON (AArch64) variants. A float64x2_t holds two lanes, so reductions
// keep a lo/hi pair of accumulators to reproduce the four-lane order.
#include "fmamba/simd/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "exp_constants.hpp"

namespace fmamba::simd {
namespace {

inline float64x2_t exp2v(float64x2_t x) {
  using namespace exp_detail;
  x = vminq_f64(vmaxq_f64(x, vdupq_n_f64(kExpMin)), vdupq_n_f64(kExpMax));
  const float64x2_t k = vrndnq_f64(vmulq_f64(x, vdupq_n_f64(kLog2e)));
  float64x2_t r = vsubq_f64(x, vmulq_f64(k, vdupq_n_f64(kLn2Hi)));
  r = vsubq_f64(r, vmulq_f64(k, vdupq_n_f64(kLn2Lo)));
  float64x2_t p = vdupq_n_f64(kExpCoeffs[0]);
  for (std::size_t j = 1; j < kExpCoeffs.size(); ++j) {
    p = vaddq_f64(vmulq_f64(p, r), vdupq_n_f64(kExpCoeffs[j]));
  }
  const float64x2_t biased = vaddq_f64(k, vdupq_n_f64(kExpMagic));
  const float64x2_t scale =
      vreinterpretq_f64_u64(vshlq_n_u64(vreinterpretq_u64_f64(biased), 52));
  return vmulq_f64(p, scale);
}

inline float64x2_t sigmoid2v(float64x2_t x) {
  const float64x2_t one = vdupq_n_f64(1.0);
  return vdivq_f64(one, vaddq_f64(one, exp2v(vsubq_f64(vdupq_n_f64(0.0), x))));
}

inline double hsum(float64x2_t lo, float64x2_t hi) {
  return (vgetq_lane_f64(lo, 0) + vgetq_lane_f64(lo, 1)) +
         (vgetq_lane_f64(hi, 0) + vgetq_lane_f64(hi, 1));
}

template <class Op, class Tail>
inline void binary(const double* a, const double* b, double* out, std::size_t n, Op op, Tail tail) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, op(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = tail(a[i], b[i]);
}

void add(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return vaddq_f64(x, y); },
         [](double x, double y) { return x + y; });
}
void sub(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return vsubq_f64(x, y); },
         [](double x, double y) { return x - y; });
}
void mul(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return vmulq_f64(x, y); },
         [](double x, double y) { return x * y; });
}
void div(const double* a, const double* b, double* out, std::size_t n) {
  binary(a, b, out, n, [](auto x, auto y) { return vdivq_f64(x, y); },
         [](double x, double y) { return x / y; });
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

void axpy_strided(double alpha, const double* x, std::size_t stride, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + alpha * x[i * stride];
}

void affine(double alpha, double beta, const double* x, double* y, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  const float64x2_t vb = vdupq_n_f64(beta);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vmulq_f64(va, vld1q_f64(x + i)), vb));
  for (; i < n; ++i) y[i] = alpha * x[i] + beta;
}

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t lo = vdupq_n_f64(0.0), hi = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    lo = vaddq_f64(lo, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    hi = vaddq_f64(hi, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  double r = hsum(lo, hi);
  for (; i < n; ++i) r = r + a[i] * b[i];
  return r;
}

double sum(const double* a, std::size_t n) {
  float64x2_t lo = vdupq_n_f64(0.0), hi = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    lo = vaddq_f64(lo, vld1q_f64(a + i));
    hi = vaddq_f64(hi, vld1q_f64(a + i + 2));
  }
  double r = hsum(lo, hi);
  for (; i < n; ++i) r = r + a[i];
  return r;
}

void exp_kernel(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, exp2v(vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = exp_reference(x[i]);
}

void sigmoid(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, sigmoid2v(vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = 1.0 / (1.0 + exp_reference(-x[i]));
}

void silu(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t v = vld1q_f64(x + i);
    vst1q_f64(out + i, vmulq_f64(v, sigmoid2v(v)));
  }
  for (; i < n; ++i) out[i] = x[i] * (1.0 / (1.0 + exp_reference(-x[i])));
}

void leaky_relu(double slope, const double* x, double* out, std::size_t n) {
  const float64x2_t vs = vdupq_n_f64(slope);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t v = vld1q_f64(x + i);
    const uint64x2_t pos = vcgtq_f64(v, vdupq_n_f64(0.0));
    vst1q_f64(out + i, vbslq_f64(pos, v, vmulq_f64(vs, v)));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void scan_forward(const ScanForwardArgs& a) {
  const std::size_t C = a.channels;
  const std::size_t N = a.state;
  const std::size_t seg = a.segment == 0 ? a.length : a.segment;
  const std::size_t C2 = C - C % 2;
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
    mul(dl, u, dbu.data(), C);
    for (std::size_t s = 0; s < N; ++s) {
      const double* arow = a.a_t + s * C;
      const float64x2_t vb = vdupq_n_f64(bt[s]);
      std::size_t i = 0;
      for (; i < C2; i += 2) {
        const float64x2_t decay = exp2v(vmulq_f64(vld1q_f64(dl + i), vld1q_f64(arow + i)));
        const float64x2_t prev = hp ? vld1q_f64(hp + s * C + i) : vdupq_n_f64(0.0);
        const float64x2_t in = vmulq_f64(vld1q_f64(dbu.data() + i), vb);
        vst1q_f64(h + s * C + i, vaddq_f64(vmulq_f64(decay, prev), in));
      }
      for (; i < C; ++i) {
        const double decay = exp_reference(dl[i] * arow[i]);
        const double prev = hp ? hp[s * C + i] : 0.0;
        h[s * C + i] = decay * prev + dbu[i] * bt[s];
      }
    }
    double* y = a.y + t * C;
    mul(a.d, u, y, C);
    for (std::size_t s = 0; s < N; ++s) axpy(ct[s], h + s * C, y, C);
  }
}

void scan_backward(const ScanBackwardArgs& g) {
  const ScanForwardArgs& a = g.fwd;
  const std::size_t C = a.channels;
  const std::size_t N = a.state;
  const std::size_t seg = a.segment == 0 ? a.length : a.segment;
  const std::size_t C4 = C - C % 4;
  std::vector<double> gh(N * C, 0.0);
  std::vector<double> dbu(C);

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
      gc[s] = gc[s] + dot(gy, h + s * C, C);
      axpy(ct[s], gy, gh.data() + s * C, C);
    }
    for (std::size_t s = 0; s < N; ++s) {
      const double* arow = a.a_t + s * C;
      double* garow = g.grad_a_t + s * C;
      double* ghs = gh.data() + s * C;
      const float64x2_t vb = vdupq_n_f64(bt[s]);
      float64x2_t acc[2] = {vdupq_n_f64(0.0), vdupq_n_f64(0.0)};
      std::size_t i = 0;
      for (; i < C4; i += 4) {
        for (int half = 0; half < 2; ++half) {
          const std::size_t j = i + 2 * half;
          const float64x2_t vdl = vld1q_f64(dl + j);
          const float64x2_t va = vld1q_f64(arow + j);
          const float64x2_t vu = vld1q_f64(u + j);
          const float64x2_t vg = vld1q_f64(ghs + j);
          const float64x2_t decay = exp2v(vmulq_f64(vdl, va));
          const float64x2_t prev = hp ? vld1q_f64(hp + s * C + j) : vdupq_n_f64(0.0);
          const float64x2_t dh_prev = vmulq_f64(decay, prev);
          const float64x2_t tdl = vaddq_f64(vmulq_f64(va, dh_prev), vmulq_f64(vb, vu));
          vst1q_f64(gdl + j, vaddq_f64(vld1q_f64(gdl + j), vmulq_f64(vg, tdl)));
          const float64x2_t ta = vmulq_f64(vdl, dh_prev);
          vst1q_f64(garow + j, vaddq_f64(vld1q_f64(garow + j), vmulq_f64(vg, ta)));
          acc[half] = vaddq_f64(acc[half], vmulq_f64(vg, vld1q_f64(dbu.data() + j)));
          const float64x2_t tu = vmulq_f64(vdl, vb);
          vst1q_f64(gu + j, vaddq_f64(vld1q_f64(gu + j), vmulq_f64(vg, tu)));
          vst1q_f64(ghs + j, vmulq_f64(vg, decay));
        }
      }
      double r = hsum(acc[0], acc[1]);
      for (; i < C; ++i) {
        const double decay = exp_reference(dl[i] * arow[i]);
        const double prev = hp ? hp[s * C + i] : 0.0;
        const double dh_prev = decay * prev;
        gdl[i] = gdl[i] + ghs[i] * (arow[i] * dh_prev + bt[s] * u[i]);
        garow[i] = garow[i] + ghs[i] * (dl[i] * dh_prev);
        r = r + ghs[i] * dbu[i];
        gu[i] = gu[i] + ghs[i] * (dl[i] * bt[s]);
        ghs[i] = ghs[i] * decay;
      }
      gb[s] = gb[s] + r;
    }
  }
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable t{
      Backend::Neon, "neon", add, sub, mul, div, axpy, axpy_strided, affine, dot, sum,
      exp_kernel, sigmoid, silu, leaky_relu, scan_forward, scan_backward,
  };
  return &t;
}

}  // namespace fmamba::simd

#endif  // __aarch64__
