#include "fmamba/losses.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fmamba/ops.hpp"
#include "fmamba/tape.hpp"

namespace fmamba {
namespace {

using Stencil = std::function<void(const double* in, double* out, std::int64_t n, std::int64_t D,
                                   std::int64_t H, std::int64_t W)>;

// Linear map applied independently to every trailing [D, H, W] block,
// recorded with its adjoint.
Tensor linear_stencil(const Tensor& x, int dims, const Stencil& fwd, const Stencil& adj) {
  if (static_cast<int>(x.rank()) < dims) throw ShapeError("gradient_map: rank too small for dims");
  const std::int64_t W = x.dim(-1), H = x.dim(-2), D = dims == 3 ? x.dim(-3) : 1;
  const std::int64_t n = static_cast<std::int64_t>(x.numel()) / (D * H * W);
  Tensor out = Tensor::zeros(x.shape());
  fwd(x.data().data(), out.mutable_data().data(), n, D, H, W);
  record_op({x}, out, [adj, n, D, H, W](const std::vector<Real>& g, GradRefs& gin) {
    if (gin[0]) adj(g.data(), gin[0]->data(), n, D, H, W);
  });
  return out;
}

std::int64_t clampi(std::int64_t v, std::int64_t hi) { return std::min<std::int64_t>(std::max<std::int64_t>(v, 0), hi - 1); }

// Sobel taps: smooth [1,2,1] across, derivative [-1,0,1] along.
constexpr double kSmooth[3] = {1.0, 2.0, 1.0};
constexpr double kDeriv[3] = {-1.0, 0.0, 1.0};

void sobel(const double* in, double* out, std::int64_t n, std::int64_t H, std::int64_t W, bool along_x,
           bool adjoint) {
  for (std::int64_t b = 0; b < n; ++b) {
    const double* src = in + b * H * W;
    double* dst = out + b * H * W;
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) {
        double acc = 0.0;
        const double gval = adjoint ? src[i * W + j] : 0.0;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            const double w = along_x ? kSmooth[di + 1] * kDeriv[dj + 1] : kDeriv[di + 1] * kSmooth[dj + 1];
            if (w == 0.0) continue;
            const std::int64_t ii = clampi(i + di, H), jj = clampi(j + dj, W);
            if (adjoint) {
              dst[ii * W + jj] += w * gval;
            } else {
              acc += w * src[ii * W + jj];
            }
          }
        if (!adjoint) dst[i * W + j] = acc;
      }
  }
}

void fdiff(const double* in, double* out, std::int64_t n, std::int64_t D, std::int64_t H, std::int64_t W,
           int axis, bool adjoint) {
  const std::int64_t stride = axis == 0 ? H * W : (axis == 1 ? W : 1);
  const std::int64_t len = axis == 0 ? D : (axis == 1 ? H : W);
  const std::int64_t vol = D * H * W;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t k = 0; k < vol; ++k) {
      const std::int64_t pos = (k / stride) % len;
      if (pos + 1 >= len) continue;
      const std::int64_t idx = b * vol + k;
      if (adjoint) {
        out[idx + stride] += in[idx];
        out[idx] -= in[idx];
      } else {
        out[idx] = in[idx + stride] - in[idx];
      }
    }
}

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor filter_all(const Tensor& x, const std::vector<Real>& win, int dims) {
  Tensor y = ops::filter1d_valid(x, win, -1);
  y = ops::filter1d_valid(y, win, -2);
  if (dims == 3) y = ops::filter1d_valid(y, win, -3);
  return y;
}

}  // namespace

void LossWeights::validate() const {
  if (pixel < 0.0 || grad < 0.0 || ssim < 0.0) throw ValidationError("loss weights must be >= 0");
}

std::vector<Real> gaussian_window(int size, Real sigma) {
  std::vector<Real> w(static_cast<std::size_t>(size));
  const Real c = (size - 1) / 2.0;
  Real total = 0.0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= total;
  return w;
}

Tensor pixel_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2) {
  check_same(xhat, x1, "pixel_loss");
  check_same(x1, x2, "pixel_loss");
  const Tensor target = ops::maximum(x1.detach(), x2.detach());
  return ops::mean(ops::abs(ops::sub(xhat, target)));
}

Tensor gradient_map(const Tensor& x, int dims) {
  if (dims == 2) {
    const Tensor gx = linear_stencil(
        x, 2, [](const double* i, double* o, std::int64_t n, std::int64_t, std::int64_t H, std::int64_t W) { sobel(i, o, n, H, W, true, false); },
        [](const double* i, double* o, std::int64_t n, std::int64_t, std::int64_t H, std::int64_t W) { sobel(i, o, n, H, W, true, true); });
    const Tensor gy = linear_stencil(
        x, 2, [](const double* i, double* o, std::int64_t n, std::int64_t, std::int64_t H, std::int64_t W) { sobel(i, o, n, H, W, false, false); },
        [](const double* i, double* o, std::int64_t n, std::int64_t, std::int64_t H, std::int64_t W) { sobel(i, o, n, H, W, false, true); });
    return ops::sqrt(ops::add_scalar(ops::add(ops::square(gx), ops::square(gy)), kGradEps));
  }
  if (dims == 3) {
    Tensor acc;
    for (int axis = 0; axis < 3; ++axis) {
      const Tensor d = linear_stencil(
          x, 3,
          [axis](const double* i, double* o, std::int64_t n, std::int64_t D, std::int64_t H, std::int64_t W) { fdiff(i, o, n, D, H, W, axis, false); },
          [axis](const double* i, double* o, std::int64_t n, std::int64_t D, std::int64_t H, std::int64_t W) { fdiff(i, o, n, D, H, W, axis, true); });
      acc = acc.defined() ? ops::add(acc, ops::square(d)) : ops::square(d);
    }
    return ops::sqrt(ops::add_scalar(acc, kGradEps));
  }
  throw ValidationError("dims must be 2 or 3");
}

Tensor grad_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2, int dims) {
  check_same(xhat, x1, "grad_loss");
  check_same(x1, x2, "grad_loss");
  const Tensor target = ops::maximum(gradient_map(x1.detach(), dims), gradient_map(x2.detach(), dims));
  return ops::sqrt(ops::mean(ops::square(ops::sub(gradient_map(xhat, dims), target))));
}

SsimParts ssim_parts(const Tensor& x, const Tensor& y, int dims) {
  check_same(x, y, "ssim");
  if (dims != 2 && dims != 3) throw ValidationError("dims must be 2 or 3");
  for (int i = 1; i <= dims; ++i) {
    if (x.dim(-i) < kSsimWindow) {
      throw ShapeError("ssim: image " + shape_str(x.shape()) + " is smaller than the " + std::to_string(kSsimWindow) +
                       "-tap window; pad the input or use a smaller window");
    }
  }
  const auto win = gaussian_window();
  const Tensor mx = filter_all(x, win, dims);
  const Tensor my = filter_all(y, win, dims);
  const Tensor mxx = ops::square(mx);
  const Tensor myy = ops::square(my);
  const Tensor mxy = ops::mul(mx, my);
  const Tensor sxx = ops::sub(filter_all(ops::square(x), win, dims), mxx);
  const Tensor syy = ops::sub(filter_all(ops::square(y), win, dims), myy);
  const Tensor sxy = ops::sub(filter_all(ops::mul(x, y), win, dims), mxy);
  const Tensor lum = ops::div(ops::add_scalar(ops::mul_scalar(mxy, 2.0), kSsimC1), ops::add_scalar(ops::add(mxx, myy), kSsimC1));
  const Tensor cs = ops::div(ops::add_scalar(ops::mul_scalar(sxy, 2.0), kSsimC2), ops::add_scalar(ops::add(sxx, syy), kSsimC2));
  return {ops::mean(ops::mul(lum, cs)), ops::mean(cs)};
}

Tensor ssim(const Tensor& x, const Tensor& y, int dims) { return ssim_parts(x, y, dims).ssim; }

Tensor ssim_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2, int dims) {
  const Tensor s1 = ssim(xhat, x1.detach(), dims);
  const Tensor s2 = ssim(xhat, x2.detach(), dims);
  return ops::add(ops::mul_scalar(ops::add_scalar(ops::neg(s1), 1.0), 0.5),
                  ops::mul_scalar(ops::add_scalar(ops::neg(s2), 1.0), 0.5));
}

LossBreakdown total_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2, const LossWeights& w, int dims) {
  w.validate();
  const Tensor lp = pixel_loss(xhat, x1, x2);
  const Tensor lg = grad_loss(xhat, x1, x2, dims);
  const Tensor ls = ssim_loss(xhat, x1, x2, dims);
  LossBreakdown out;
  out.pixel = lp.item();
  out.grad = lg.item();
  out.ssim = ls.item();
  out.total = ops::add(ops::add(ops::mul_scalar(lp, w.pixel), ops::mul_scalar(lg, w.grad)), ops::mul_scalar(ls, w.ssim));
  return out;
}

}  // namespace fmamba
