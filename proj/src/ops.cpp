#include "fmamba/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fmamba/simd/kernels.hpp"
#include "fmamba/tape.hpp"

namespace fmamba::ops {
namespace {

std::atomic<bool> g_check_finite{false};

Tensor finish(Tensor out, const char* op) {
  if (g_check_finite.load(std::memory_order_relaxed) && !out.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by ") + op);
  }
  return out;
}

Tensor make(const Shape& shape) { return Tensor::zeros(shape); }

std::int64_t norm_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("invalid axis " + std::to_string(axis));
  return axis;
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Broadcast bookkeeping: per output dimension, the stride into each operand
// (zero where the operand is broadcast).
struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> sa;
  std::vector<std::int64_t> sb;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  p.out = broadcast_shape(a, b);
  const std::size_t r = p.out.size();
  auto operand_strides = [&](const Shape& s) {
    std::vector<std::int64_t> st(r, 0);
    const auto own = strides_of(s);
    const std::size_t off = r - s.size();
    for (std::size_t i = 0; i < s.size(); ++i) st[off + i] = s[i] == 1 ? 0 : own[i];
    return st;
  };
  p.sa = operand_strides(a);
  p.sb = operand_strides(b);
  return p;
}

template <class F>
void for_each_row(const BroadcastPlan& p, F&& f) {
  const std::size_t r = p.out.size();
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t outer = shape_numel(p.out) / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t o = 0; o < outer; ++o) {
    f(oa, ob, o * inner, inner, p.sa[r - 1], p.sb[r - 1]);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      oa -= p.sa[d] * p.out[d];
      ob -= p.sb[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

using KernelBinary = void (*)(const double*, const double*, double*, std::size_t);

template <class Fwd, class GradA, class GradB>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, KernelBinary kernel, Fwd fwd,
              GradA grad_a, GradB grad_b) {
  const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
  Tensor out = make(plan.out);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.mutable_data().data();
  if (a.shape() == b.shape() && kernel) {
    kernel(pa, pb, po, out.numel());
  } else {
    for_each_row(plan, [&](std::int64_t oa, std::int64_t ob, std::int64_t oo, std::int64_t n,
                           std::int64_t sa, std::int64_t sb) {
      if (sa == 1 && sb == 1 && kernel) {
        kernel(pa + oa, pb + ob, po + oo, static_cast<std::size_t>(n));
        return;
      }
      for (std::int64_t i = 0; i < n; ++i) po[oo + i] = fwd(pa[oa + i * sa], pb[ob + i * sb]);
    });
  }
  record_op({a, b}, out, [a, b, plan, grad_a, grad_b](const std::vector<Real>& g, GradRefs& gin) {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* ga = gin[0] ? gin[0]->data() : nullptr;
    double* gb = gin[1] ? gin[1]->data() : nullptr;
    for_each_row(plan, [&](std::int64_t oa, std::int64_t ob, std::int64_t oo, std::int64_t n,
                           std::int64_t sa, std::int64_t sb) {
      for (std::int64_t i = 0; i < n; ++i) {
        const double x = pa[oa + i * sa];
        const double y = pb[ob + i * sb];
        const double go = g[static_cast<std::size_t>(oo + i)];
        if (ga) ga[oa + i * sa] += grad_a(go, x, y);
        if (gb) gb[ob + i * sb] += grad_b(go, x, y);
      }
    });
  });
  return finish(out, name);
}

template <class Fwd, class Grad>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Grad grad) {
  Tensor out = make(a.shape());
  fwd(a.data().data(), out.mutable_data().data(), a.numel());
  Tensor y = out;
  record_op({a}, out, [a, y, grad](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    const double* x = a.data().data();
    const double* yo = y.data().data();
    double* gx = gin[0]->data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += grad(g[i], x[i], yo[i]);
  });
  return finish(out, name);
}

}  // namespace

void set_check_finite(bool on) { g_check_finite.store(on, std::memory_order_relaxed); }
bool check_finite_enabled() { return g_check_finite.load(std::memory_order_relaxed); }

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, simd::active().add, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, simd::active().sub, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, simd::active().mul, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, simd::active().div, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      "max", a, b, nullptr, [](double x, double y) { return x >= y ? x : y; },
      [](double g, double x, double y) { return x >= y ? g : 0.0; },
      [](double g, double x, double y) { return x >= y ? 0.0 : g; });
}

Tensor add_scalar(const Tensor& a, Real s) {
  return unary(
      "add_scalar", a,
      [s](const double* x, double* y, std::size_t n) { simd::active().affine(1.0, s, x, y, n); },
      [](double g, double, double) { return g; });
}

Tensor mul_scalar(const Tensor& a, Real s) {
  return unary(
      "mul_scalar", a,
      [s](const double* x, double* y, std::size_t n) { simd::active().affine(s, 0.0, x, y, n); },
      [s](double g, double, double) { return g * s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor leaky_relu(const Tensor& a, Real slope) {
  return unary(
      "leaky_relu", a,
      [slope](const double* x, double* y, std::size_t n) {
        simd::active().leaky_relu(slope, x, y, n);
      },
      [slope](double g, double x, double) { return x > 0.0 ? g : g * slope; });
}

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](const double* x, double* y, std::size_t n) { simd::active().sigmoid(x, y, n); },
      [](double g, double, double y) { return g * (y * (1.0 - y)); });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](const double* x, double* y, std::size_t n) { simd::active().silu(x, y, n); },
      [](double g, double x, double) {
        const double s = 1.0 / (1.0 + simd::exp_reference(-x));
        return g * (s + x * s * (1.0 - s));
      });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](const double* x, double* y, std::size_t n) { simd::active().exp(x, y, n); },
      [](double g, double, double y) { return g * y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a,
      [](const double* x, double* y, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) y[i] = std::log(x[i]);
      },
      [](double g, double x, double) { return g / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a,
      [](const double* x, double* y, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) y[i] = std::fabs(x[i]);
      },
      [](double g, double x, double) { return x > 0.0 ? g : (x < 0.0 ? -g : 0.0); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      "softplus", a,
      [](const double* x, double* y, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 20.0 ? x[i] : std::log1p(std::exp(x[i]));
      },
      [](double g, double x, double) { return g / (1.0 + std::exp(-x)); });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a,
      [](const double* x, double* y, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) y[i] = std::sqrt(x[i]);
      },
      [](double g, double, double y) { return y > 0.0 ? g / (2.0 * y) : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a,
      [](const double* x, double* y, std::size_t n) { simd::active().mul(x, x, y, n); },
      [](double g, double x, double) { return 2.0 * x * g; });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b, Real alpha) {
  auto need_b = [&]() -> const Tensor& {
    if (!b) throw ShapeError("binary elementwise op requires a second operand");
    return *b;
  };
  switch (op) {
    case ElementwiseOp::Add: return add(a, need_b());
    case ElementwiseOp::Sub: return sub(a, need_b());
    case ElementwiseOp::Mul: return mul(a, need_b());
    case ElementwiseOp::Div: return div(a, need_b());
    case ElementwiseOp::Max: return maximum(a, need_b());
    case ElementwiseOp::LeakyRelu: return leaky_relu(a, alpha);
    case ElementwiseOp::Sigmoid: return sigmoid(a);
    case ElementwiseOp::Silu: return silu(a);
    case ElementwiseOp::Exp: return exp(a);
    case ElementwiseOp::Abs: return abs(a);
  }
  throw Error("unknown elementwise op");
}

Tensor reduce(ReduceOp op, const Tensor& a, std::vector<std::int64_t> axes, bool keepdim) {
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  std::vector<bool> reduced(r, axes.empty());
  for (auto ax : axes) reduced[static_cast<std::size_t>(norm_axis(ax, r))] = true;

  Shape out_keep(r);
  for (std::size_t i = 0; i < r; ++i) out_keep[i] = reduced[i] ? 1 : in[i];
  Shape out_shape;
  if (keepdim) {
    out_shape = out_keep;
  } else {
    for (std::size_t i = 0; i < r; ++i)
      if (!reduced[i]) out_shape.push_back(in[i]);
    if (out_shape.empty()) out_shape = {1};
  }
  const std::int64_t out_n = shape_numel(out_keep);
  const std::int64_t group = static_cast<std::int64_t>(a.numel()) / out_n;

  // Map every input element to its output slot.
  std::vector<std::int64_t> target(a.numel());
  {
    const auto ost = strides_of(out_keep);
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t off = 0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
      target[k] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        if (!reduced[d]) off += ost[d];
        if (idx[d] < in[d]) break;
        if (!reduced[d]) off -= ost[d] * in[d];
        idx[d] = 0;
      }
    }
  }

  const double* x = a.data().data();
  Tensor out = make(out_shape);
  double* y = out.mutable_data().data();
  std::vector<std::int64_t> argmax;
  const bool full = out_n == 1;

  switch (op) {
    case ReduceOp::Sum:
    case ReduceOp::Mean: {
      if (full) {
        y[0] = simd::active().sum(x, a.numel());
      } else {
        for (std::size_t k = 0; k < a.numel(); ++k) y[target[k]] += x[k];
      }
      if (op == ReduceOp::Mean) {
        for (std::int64_t j = 0; j < out_n; ++j) y[j] /= static_cast<double>(group);
      }
      break;
    }
    case ReduceOp::Max: {
      argmax.assign(static_cast<std::size_t>(out_n), -1);
      for (std::size_t k = 0; k < a.numel(); ++k) {
        auto& am = argmax[static_cast<std::size_t>(target[k])];
        if (am < 0 || x[k] > x[am]) am = static_cast<std::int64_t>(k);
      }
      for (std::int64_t j = 0; j < out_n; ++j) y[j] = x[argmax[static_cast<std::size_t>(j)]];
      break;
    }
    case ReduceOp::L1Norm:
      for (std::size_t k = 0; k < a.numel(); ++k) y[target[k]] += std::fabs(x[k]);
      break;
    case ReduceOp::L2Norm:
      if (full) {
        y[0] = simd::active().dot(x, x, a.numel());
      } else {
        for (std::size_t k = 0; k < a.numel(); ++k) y[target[k]] += x[k] * x[k];
      }
      for (std::int64_t j = 0; j < out_n; ++j) y[j] = std::sqrt(y[j]);
      break;
  }

  Tensor yo = out;
  record_op({a}, out,
            [a, yo, op, target = std::move(target), argmax = std::move(argmax),
             group](const std::vector<Real>& g, GradRefs& gin) {
              if (!gin[0]) return;
              double* gx = gin[0]->data();
              const double* x = a.data().data();
              const double* y = yo.data().data();
              const std::size_t n = a.numel();
              switch (op) {
                case ReduceOp::Sum:
                  for (std::size_t k = 0; k < n; ++k) gx[k] += g[target[k]];
                  break;
                case ReduceOp::Mean:
                  for (std::size_t k = 0; k < n; ++k) gx[k] += g[target[k]] / static_cast<double>(group);
                  break;
                case ReduceOp::Max:
                  for (std::size_t j = 0; j < argmax.size(); ++j) gx[argmax[j]] += g[j];
                  break;
                case ReduceOp::L1Norm:
                  for (std::size_t k = 0; k < n; ++k) {
                    const double s = x[k] > 0.0 ? 1.0 : (x[k] < 0.0 ? -1.0 : 0.0);
                    gx[k] += g[target[k]] * s;
                  }
                  break;
                case ReduceOp::L2Norm:
                  for (std::size_t k = 0; k < n; ++k) {
                    const double nrm = y[target[k]];
                    if (nrm > 0.0) gx[k] += g[target[k]] * x[k] / nrm;
                  }
                  break;
              }
            });
  return finish(out, "reduce");
}

Tensor sum(const Tensor& a, std::vector<std::int64_t> axes, bool keepdim) {
  return reduce(ReduceOp::Sum, a, std::move(axes), keepdim);
}
Tensor mean(const Tensor& a, std::vector<std::int64_t> axes, bool keepdim) {
  return reduce(ReduceOp::Mean, a, std::move(axes), keepdim);
}
Tensor max(const Tensor& a, std::vector<std::int64_t> axes, bool keepdim) {
  return reduce(ReduceOp::Max, a, std::move(axes), keepdim);
}
Tensor l1_norm(const Tensor& a) { return reduce(ReduceOp::L1Norm, a); }
Tensor l2_norm(const Tensor& a) { return reduce(ReduceOp::L2Norm, a); }

namespace {

// [r, c] -> [c, r]
std::vector<double> transposed(const double* src, std::int64_t r, std::int64_t c) {
  std::vector<double> out(static_cast<std::size_t>(r * c));
  constexpr std::int64_t kBlock = 64;
  for (std::int64_t i0 = 0; i0 < r; i0 += kBlock) {
    const std::int64_t i1 = std::min(r, i0 + kBlock);
    for (std::int64_t j = 0; j < c; ++j)
      for (std::int64_t i = i0; i < i1; ++i) out[static_cast<std::size_t>(j * r + i)] = src[i * c + j];
  }
  return out;
}

// Token matrices are tall and narrow; working on the transposes keeps every
// kernel call running over the long axis.
bool use_tall_path(std::int64_t m, std::int64_t n) { return n <= 32 && m >= 128; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.mutable_data().data();
  const auto& kt = simd::active();
  const bool tall = use_tall_path(m, n);
  if (tall) {
    const std::vector<double> at = transposed(pa, m, k);
    std::vector<double> ct(static_cast<std::size_t>(n * m), 0.0);
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
    for (std::int64_t j = 0; j < n; ++j) {
      for (std::int64_t p = 0; p < k; ++p) kt.axpy(pb[p * n + j], at.data() + p * m, ct.data() + j * m, m);
    }
    const std::vector<double> c = transposed(ct.data(), n, m);
    std::copy(c.begin(), c.end(), pc);
  } else {
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t p = 0; p < k; ++p) kt.axpy(pa[i * k + p], pb + p * n, pc + i * n, n);
    }
  }
  record_op({a, b}, out, [a, b, m, k, n, tall](const std::vector<Real>& g, GradRefs& gin) {
    const auto& kt = simd::active();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (tall) {
      const std::vector<double> gt = transposed(g.data(), m, n);
      if (gin[0]) {
        std::vector<double> gat(static_cast<std::size_t>(k * m), 0.0);
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
        for (std::int64_t p = 0; p < k; ++p) {
          for (std::int64_t j = 0; j < n; ++j) kt.axpy(pb[p * n + j], gt.data() + j * m, gat.data() + p * m, m);
        }
        const std::vector<double> ga_rows = transposed(gat.data(), k, m);
        simd::active().add(gin[0]->data(), ga_rows.data(), gin[0]->data(), ga_rows.size());
      }
      if (gin[1]) {
        const std::vector<double> at = transposed(pa, m, k);
        double* gb = gin[1]->data();
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
        for (std::int64_t p = 0; p < k; ++p) {
          for (std::int64_t j = 0; j < n; ++j) gb[p * n + j] += kt.dot(at.data() + p * m, gt.data() + j * m, m);
        }
      }
      return;
    }
    if (gin[0]) {
      double* ga = gin[0]->data();
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t p = 0; p < k; ++p) ga[i * k + p] += kt.dot(g.data() + i * n, pb + p * n, n);
      }
    }
    if (gin[1]) {
      double* gb = gin[1]->data();
#pragma omp parallel for schedule(static) if (m * k * n > 65536)
      for (std::int64_t p = 0; p < k; ++p) {
        for (std::int64_t i = 0; i < m; ++i) kt.axpy(pa[i * k + p], g.data() + i * n, gb + p * n, n);
      }
    }
  });
  return finish(out, "matmul");
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  check_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(a.numel())) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor out(shape, a.values());
  record_op({a}, out, [](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    simd::active().add(gin[0]->data(), g.data(), gin[0]->data(), g.size());
  });
  return out;
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  if (perm.size() != r) throw ShapeError("permute rank mismatch");
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (perm[i] >= r || seen[perm[i]]) throw ShapeError("invalid permutation");
    seen[perm[i]] = true;
    out_shape[i] = in[perm[i]];
  }
  const auto ist = strides_of(in);
  // src[k] = input offset of output element k
  std::vector<std::int64_t> src(a.numel());
  {
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t off = 0;
    for (std::size_t k = 0; k < a.numel(); ++k) {
      src[k] = off;
      for (std::size_t d = r; d-- > 0;) {
        ++idx[d];
        off += ist[perm[d]];
        if (idx[d] < out_shape[d]) break;
        off -= ist[perm[d]] * out_shape[d];
        idx[d] = 0;
      }
    }
  }
  Tensor out = make(out_shape);
  const double* x = a.data().data();
  double* y = out.mutable_data().data();
  for (std::size_t k = 0; k < src.size(); ++k) y[k] = x[src[k]];
  record_op({a}, out, [src = std::move(src)](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    double* gx = gin[0]->data();
    for (std::size_t k = 0; k < src.size(); ++k) gx[src[k]] += g[k];
  });
  return out;
}

Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = norm_axis(axis, a.rank());
  const Shape& in = a.shape();
  if (start < 0 || length < 1 || start + length > in[static_cast<std::size_t>(axis)]) {
    throw ShapeError("slice out of range on " + shape_str(in));
  }
  Shape out_shape = in;
  out_shape[static_cast<std::size_t>(axis)] = length;
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= in[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < in.size(); ++i) inner *= in[i];
  const std::int64_t n_in = in[static_cast<std::size_t>(axis)];
  Tensor out = make(out_shape);
  const double* x = a.data().data();
  double* y = out.mutable_data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::memcpy(y + o * length * inner, x + (o * n_in + start) * inner,
                sizeof(double) * static_cast<std::size_t>(length * inner));
  }
  record_op({a}, out, [=](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    double* gx = gin[0]->data();
    for (std::int64_t o = 0; o < outer; ++o) {
      simd::active().add(gx + (o * n_in + start) * inner, g.data() + o * length * inner,
                         gx + (o * n_in + start) * inner, static_cast<std::size_t>(length * inner));
    }
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  axis = norm_axis(axis, parts[0].rank());
  const auto ax = static_cast<std::size_t>(axis);
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != parts[0].shape()[i]) {
        throw ShapeError("concat shape mismatch: " + shape_str(s) + " vs " + shape_str(parts[0].shape()));
      }
    }
    out_shape[ax] += s[ax];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= out_shape[i];
  for (std::size_t i = ax + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  Tensor out = make(out_shape);
  double* y = out.mutable_data().data();
  const std::int64_t n_out = out_shape[ax];
  std::vector<std::int64_t> offsets;
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t n = p.shape()[ax];
    const double* x = p.data().data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(y + (o * n_out + off) * inner, x + o * n * inner,
                  sizeof(double) * static_cast<std::size_t>(n * inner));
    }
    offsets.push_back(off);
    off += p.shape()[ax];
  }
  std::vector<std::int64_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.shape()[ax]);
  record_op(parts, out, [=](const std::vector<Real>& g, GradRefs& gin) {
    for (std::size_t k = 0; k < gin.size(); ++k) {
      if (!gin[k]) continue;
      double* gx = gin[k]->data();
      const std::int64_t n = sizes[k];
      for (std::int64_t o = 0; o < outer; ++o) {
        simd::active().add(gx + o * n * inner, g.data() + (o * n_out + offsets[k]) * inner,
                           gx + o * n * inner, static_cast<std::size_t>(n * inner));
      }
    }
  });
  return out;
}

Tensor gather_tokens(const Tensor& grid, const std::vector<std::int64_t>& order) {
  if (grid.rank() != 3) throw ShapeError("gather_tokens expects [B, C, S], got " + shape_str(grid.shape()));
  const std::int64_t B = grid.dim(0), C = grid.dim(1), S = grid.dim(2);
  const auto L = static_cast<std::int64_t>(order.size());
  for (auto p : order)
    if (p < 0 || p >= S) throw ShapeError("gather_tokens position out of range");
  Tensor out = make({B * L, C});
  const double* x = grid.data().data();
  double* y = out.mutable_data().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t l = 0; l < L; ++l)
      for (std::int64_t c = 0; c < C; ++c) y[(b * L + l) * C + c] = x[(b * C + c) * S + order[l]];
  record_op({grid}, out, [order, B, C, S, L](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    double* gx = gin[0]->data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t l = 0; l < L; ++l)
        for (std::int64_t c = 0; c < C; ++c) gx[(b * C + c) * S + order[l]] += g[(b * L + l) * C + c];
  });
  return out;
}

Tensor scatter_tokens(const Tensor& tokens, const std::vector<std::int64_t>& order, std::int64_t batch) {
  if (tokens.rank() != 2) throw ShapeError("scatter_tokens expects [B*S, C]");
  const auto S = static_cast<std::int64_t>(order.size());
  const std::int64_t B = batch, C = tokens.dim(1);
  if (B < 1 || tokens.dim(0) != B * S) throw ShapeError("scatter_tokens order length mismatch");
  for (auto p : order)
    if (p < 0 || p >= S) throw ShapeError("scatter_tokens position out of range");
  Tensor out = make({B, C, S});
  const double* x = tokens.data().data();
  double* y = out.mutable_data().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t l = 0; l < S; ++l)
      for (std::int64_t c = 0; c < C; ++c) y[(b * C + c) * S + order[l]] = x[(b * S + l) * C + c];
  record_op({tokens}, out, [order, B, C, S](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    double* gx = gin[0]->data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t l = 0; l < S; ++l)
        for (std::int64_t c = 0; c < C; ++c) gx[(b * S + l) * C + c] += g[(b * C + c) * S + order[l]];
  });
  return out;
}

Tensor filter1d_valid(const Tensor& x, const std::vector<Real>& kernel, std::int64_t axis) {
  axis = norm_axis(axis, x.rank());
  const auto ax = static_cast<std::size_t>(axis);
  const Shape& in = x.shape();
  const auto K = static_cast<std::int64_t>(kernel.size());
  const std::int64_t n = in[ax];
  if (K < 1 || n < K) {
    throw ShapeError("filter1d_valid: axis length " + std::to_string(n) + " smaller than window " +
                     std::to_string(K));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= in[i];
  for (std::size_t i = ax + 1; i < in.size(); ++i) inner *= in[i];
  const std::int64_t m = n - K + 1;
  Shape out_shape = in;
  out_shape[ax] = m;
  Tensor out = make(out_shape);
  const double* px = x.data().data();
  double* py = out.mutable_data().data();
  const auto& kt = simd::active();
  for (std::int64_t o = 0; o < outer; ++o) {
    const double* xb = px + o * n * inner;
    double* yb = py + o * m * inner;
    if (inner == 1) {
      for (std::int64_t j = 0; j < m; ++j) yb[j] = kt.dot(kernel.data(), xb + j, static_cast<std::size_t>(K));
    } else {
      for (std::int64_t j = 0; j < m; ++j)
        for (std::int64_t t = 0; t < K; ++t)
          kt.axpy(kernel[t], xb + (j + t) * inner, yb + j * inner, static_cast<std::size_t>(inner));
    }
  }
  record_op({x}, out, [=](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    double* gx = gin[0]->data();
    const auto& kt = simd::active();
    for (std::int64_t o = 0; o < outer; ++o) {
      double* gb = gx + o * n * inner;
      const double* go = g.data() + o * m * inner;
      for (std::int64_t j = 0; j < m; ++j)
        for (std::int64_t t = 0; t < K; ++t)
          kt.axpy(kernel[t], go + j * inner, gb + (j + t) * inner, static_cast<std::size_t>(inner));
    }
  });
  return finish(out, "filter1d_valid");
}

Tensor upsample_nearest(const Tensor& x, std::int64_t factor) {
  if (factor < 1) throw ShapeError("upsample factor must be >= 1");
  const Shape& in = x.shape();
  if (in.size() < 3) throw ShapeError("upsample expects [B, C, spatial...]");
  const std::size_t r = in.size();
  Shape out_shape = in;
  for (std::size_t i = 2; i < r; ++i) out_shape[i] *= factor;
  const auto ist = strides_of(in);
  std::vector<std::int64_t> src(static_cast<std::size_t>(shape_numel(out_shape)));
  {
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t k = 0; k < src.size(); ++k) {
      std::int64_t off = 0;
      for (std::size_t d = 0; d < r; ++d) off += (d < 2 ? idx[d] : idx[d] / factor) * ist[d];
      src[k] = off;
      for (std::size_t d = r; d-- > 0;) {
        if (++idx[d] < out_shape[d]) break;
        idx[d] = 0;
      }
    }
  }
  Tensor out = make(out_shape);
  const double* px = x.data().data();
  double* py = out.mutable_data().data();
  for (std::size_t k = 0; k < src.size(); ++k) py[k] = px[src[k]];
  record_op({x}, out, [src = std::move(src)](const std::vector<Real>& g, GradRefs& gin) {
    if (!gin[0]) return;
    double* gx = gin[0]->data();
    for (std::size_t k = 0; k < src.size(); ++k) gx[src[k]] += g[k];
  });
  return out;
}

}  // namespace fmamba::ops
