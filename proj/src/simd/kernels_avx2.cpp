// AVX2 variants. Each function carries its own target attribute so that
// inline library code instantiated here stays baseline x86-64.
#include "fmamba/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "exp_constants.hpp"

#define FMAMBA_AVX2 __attribute__((target("avx2")))

namespace fmamba::simd {
namespace {

FMAMBA_AVX2 inline double hsum(__m256d v) {
  alignas(32) double l[4];
  _mm256_store_pd(l, v);
  return (l[0] + l[1]) + (l[2] + l[3]);
}

FMAMBA_AVX2 inline __m256d exp4(__m256d x) {
  using namespace exp_detail;
  x = _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(kExpMin)), _mm256_set1_pd(kExpMax));
  const __m256d k = _mm256_round_pd(_mm256_mul_pd(x, _mm256_set1_pd(kLog2e)),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(k, _mm256_set1_pd(kLn2Hi)));
  r = _mm256_sub_pd(r, _mm256_mul_pd(k, _mm256_set1_pd(kLn2Lo)));
  __m256d p = _mm256_set1_pd(kExpCoeffs[0]);
  for (std::size_t j = 1; j < kExpCoeffs.size(); ++j) {
    p = _mm256_add_pd(_mm256_mul_pd(p, r), _mm256_set1_pd(kExpCoeffs[j]));
  }
  const __m256d biased = _mm256_add_pd(k, _mm256_set1_pd(kExpMagic));
  const __m256d scale = _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_castpd_si256(biased), 52));
  return _mm256_mul_pd(p, scale);
}

FMAMBA_AVX2 inline __m256d sigmoid4(__m256d x) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d e = exp4(_mm256_sub_pd(_mm256_setzero_pd(), x));
  return _mm256_div_pd(one, _mm256_add_pd(one, e));
}

FMAMBA_AVX2 void add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

FMAMBA_AVX2 void sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

FMAMBA_AVX2 void mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

FMAMBA_AVX2 void div(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] / b[i];
}

FMAMBA_AVX2 void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d p = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), p));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i];
}

FMAMBA_AVX2 void axpy_strided(double alpha, const double* x, std::size_t stride, double* y,
                              std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double* p = x + i * stride;
    const __m256d xv = _mm256_set_pd(p[3 * stride], p[2 * stride], p[stride], p[0]);
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, xv)));
  }
  for (; i < n; ++i) y[i] = y[i] + alpha * x[i * stride];
}

FMAMBA_AVX2 void affine(double alpha, double beta, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vb = _mm256_set1_pd(beta);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(va, _mm256_loadu_pd(x + i)), vb));
  for (; i < n; ++i) y[i] = alpha * x[i] + beta;
}

FMAMBA_AVX2 double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  double r = hsum(acc);
  for (; i < n; ++i) r = r + a[i] * b[i];
  return r;
}

FMAMBA_AVX2 double sum(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double r = hsum(acc);
  for (; i < n; ++i) r = r + a[i];
  return r;
}

FMAMBA_AVX2 void exp_kernel(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, exp4(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = exp_reference(x[i]);
}

FMAMBA_AVX2 void sigmoid(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, sigmoid4(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) out[i] = 1.0 / (1.0 + exp_reference(-x[i]));
}

FMAMBA_AVX2 void silu(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(out + i, _mm256_mul_pd(v, sigmoid4(v)));
  }
  for (; i < n; ++i) out[i] = x[i] * (1.0 / (1.0 + exp_reference(-x[i])));
}

FMAMBA_AVX2 void leaky_relu(double slope, const double* x, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    const __m256d pos = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(out + i, _mm256_blendv_pd(_mm256_mul_pd(vs, v), v, pos));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

FMAMBA_AVX2 void scan_forward(const ScanForwardArgs& a) {
  const std::size_t C = a.channels;
  const std::size_t N = a.state;
  const std::size_t seg = a.segment == 0 ? a.length : a.segment;
  const std::size_t C4 = C - C % 4;
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
      const __m256d vb = _mm256_set1_pd(bt[s]);
      std::size_t i = 0;
      for (; i < C4; i += 4) {
        const __m256d decay = exp4(_mm256_mul_pd(_mm256_loadu_pd(dl + i), _mm256_loadu_pd(arow + i)));
        const __m256d prev = hp ? _mm256_loadu_pd(hp + s * C + i) : _mm256_setzero_pd();
        const __m256d in = _mm256_mul_pd(_mm256_loadu_pd(dbu.data() + i), vb);
        _mm256_storeu_pd(h + s * C + i, _mm256_add_pd(_mm256_mul_pd(decay, prev), in));
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

FMAMBA_AVX2 void scan_backward(const ScanBackwardArgs& g) {
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
      const __m256d vb = _mm256_set1_pd(bt[s]);
      __m256d acc = _mm256_setzero_pd();
      std::size_t i = 0;
      for (; i < C4; i += 4) {
        const __m256d vdl = _mm256_loadu_pd(dl + i);
        const __m256d va = _mm256_loadu_pd(arow + i);
        const __m256d vu = _mm256_loadu_pd(u + i);
        const __m256d vg = _mm256_loadu_pd(ghs + i);
        const __m256d decay = exp4(_mm256_mul_pd(vdl, va));
        const __m256d prev = hp ? _mm256_loadu_pd(hp + s * C + i) : _mm256_setzero_pd();
        const __m256d dh_prev = _mm256_mul_pd(decay, prev);
        const __m256d tdl = _mm256_add_pd(_mm256_mul_pd(va, dh_prev), _mm256_mul_pd(vb, vu));
        _mm256_storeu_pd(gdl + i, _mm256_add_pd(_mm256_loadu_pd(gdl + i), _mm256_mul_pd(vg, tdl)));
        const __m256d ta = _mm256_mul_pd(vdl, dh_prev);
        _mm256_storeu_pd(garow + i, _mm256_add_pd(_mm256_loadu_pd(garow + i), _mm256_mul_pd(vg, ta)));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(vg, _mm256_loadu_pd(dbu.data() + i)));
        const __m256d tu = _mm256_mul_pd(vdl, vb);
        _mm256_storeu_pd(gu + i, _mm256_add_pd(_mm256_loadu_pd(gu + i), _mm256_mul_pd(vg, tu)));
        _mm256_storeu_pd(ghs + i, _mm256_mul_pd(vg, decay));
      }
      double r = hsum(acc);
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

const KernelTable* avx2_table() {
  static const KernelTable t{
      Backend::Avx2, "avx2", add, sub, mul, div, axpy, axpy_strided, affine, dot, sum,
      exp_kernel, sigmoid, silu, leaky_relu, scan_forward, scan_backward,
  };
  return &t;
}

}  // namespace fmamba::simd
