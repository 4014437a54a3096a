#include "fmamba/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "fmamba/ops.hpp"
#include "fmamba/simd/kernels.hpp"
#include "fmamba/tape.hpp"

namespace fmamba::nn {
namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

// Conv geometry with 2D folded into 3D (depth 1, kernel depth 1).
struct Geometry {
  std::int64_t B, Ci, Co;
  std::int64_t D, H, W;
  std::int64_t KD, KH, KW;
  std::int64_t OD, OH, OW;
  std::int64_t sd, s, pd, p, dild, dil;

  // Output columns whose input column for kernel tap kx lies inside the row.
  void col_range(std::int64_t kx, std::int64_t& lo, std::int64_t& hi) const {
    lo = std::max<std::int64_t>(0, ceil_div(p - kx * dil, s));
    hi = std::min<std::int64_t>(OW - 1, floor_div(W - 1 + p - kx * dil, s));
  }
};

Geometry geometry(const Tensor& x, const ConvParams& prm) {
  const int sr = prm.spatial_rank();
  if (sr != 2 && sr != 3) throw ShapeError("conv kernel must have 2 or 3 spatial dims");
  if (static_cast<int>(x.rank()) != sr + 2) {
    throw ShapeError("conv input " + shape_str(x.shape()) + " does not match kernel rank " +
                     shape_str(prm.weight.shape()));
  }
  if (x.dim(1) != prm.in_channels()) {
    throw ShapeError("conv channel mismatch: input has " + std::to_string(x.dim(1)) +
                     ", kernel expects " + std::to_string(prm.in_channels()));
  }
  if (!prm.bias.defined() || prm.bias.numel() != static_cast<std::size_t>(prm.out_channels())) {
    throw ShapeError("conv bias must have out_channels elements");
  }
  if (prm.stride < 1 || prm.padding < 0 || prm.dilation < 1) {
    throw ValidationError("conv requires stride >= 1, padding >= 0, dilation >= 1");
  }
  Geometry g{};
  g.B = x.dim(0);
  g.Ci = x.dim(1);
  g.Co = prm.out_channels();
  const bool vol = sr == 3;
  g.D = vol ? x.dim(2) : 1;
  g.H = x.dim(-2);
  g.W = x.dim(-1);
  g.KD = vol ? prm.weight.dim(2) : 1;
  g.KH = prm.weight.dim(-2);
  g.KW = prm.weight.dim(-1);
  g.s = prm.stride;
  g.p = prm.padding;
  g.dil = prm.dilation;
  g.sd = vol ? g.s : 1;
  g.pd = vol ? g.p : 0;
  g.dild = vol ? g.dil : 1;
  g.OD = conv_out_size(g.D, static_cast<int>(g.KD), static_cast<int>(g.sd), static_cast<int>(g.pd),
                       static_cast<int>(g.dild));
  g.OH = conv_out_size(g.H, static_cast<int>(g.KH), prm.stride, prm.padding, prm.dilation);
  g.OW = conv_out_size(g.W, static_cast<int>(g.KW), prm.stride, prm.padding, prm.dilation);
  if (g.OD < 1 || g.OH < 1 || g.OW < 1) {
    throw ShapeError("conv kernel extent does not fit input " + shape_str(x.shape()));
  }
  return g;
}

// Stride-1 convs run on zero-padded copies laid out with padded strides, so
// every kernel tap is one contiguous span instead of one call per row.
struct Padded {
  std::int64_t Dp, Hp, Wp, plane, span;

  explicit Padded(const Geometry& g)
      : Dp(g.D + 2 * g.pd), Hp(g.H + 2 * g.p), Wp(g.W + 2 * g.p), plane(Dp * Hp * Wp),
        span((g.OD - 1) * Hp * Wp + (g.OH - 1) * Wp + g.OW) {}

  std::int64_t tap_offset(const Geometry& g, std::int64_t kz, std::int64_t ky, std::int64_t kx) const {
    return kz * g.dild * Hp * Wp + ky * g.dil * Wp + kx * g.dil;
  }
  std::int64_t out_index(std::int64_t od, std::int64_t oh) const { return (od * Hp + oh) * Wp; }
};

// Copies n planes of [D, H, W] into zeroed [Dp, Hp, Wp] planes.
std::vector<double> pad_planes(const double* src, std::int64_t n, const Geometry& g, const Padded& pd) {
  std::vector<double> out(static_cast<std::size_t>(n * pd.plane), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t z = 0; z < g.D; ++z)
      for (std::int64_t y = 0; y < g.H; ++y) {
        const double* s = src + (i * g.D + z) * g.H * g.W + y * g.W;
        std::copy(s, s + g.W, out.data() + i * pd.plane + ((z + g.pd) * pd.Hp + y + g.p) * pd.Wp + g.p);
      }
  return out;
}

// Spreads n output planes [OD, OH, OW] into zeroed planes with padded strides.
std::vector<double> spread_output(const double* src, std::int64_t n, const Geometry& g, const Padded& pd) {
  const std::int64_t oplane = g.OD * pd.Hp * pd.Wp;
  std::vector<double> out(static_cast<std::size_t>(n * oplane), 0.0);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t od = 0; od < g.OD; ++od)
      for (std::int64_t oh = 0; oh < g.OH; ++oh) {
        const double* s = src + ((i * g.OD + od) * g.OH + oh) * g.OW;
        std::copy(s, s + g.OW, out.data() + i * oplane + pd.out_index(od, oh));
      }
  return out;
}

Tensor conv_stride1(const Tensor& x, const ConvParams& prm, const Geometry& g, const Shape& out_shape) {
  const Padded pd(g);
  const std::int64_t oplane = g.OD * pd.Hp * pd.Wp;
  const std::int64_t out_plane = g.OD * g.OH * g.OW;
  const std::int64_t taps = g.KD * g.KH * g.KW;
  const auto span = static_cast<std::size_t>(pd.span);
  auto xpad = std::make_shared<std::vector<double>>(pad_planes(x.data().data(), g.B * g.Ci, g, pd));
  Tensor out = Tensor::zeros(out_shape);
  const double* pw = prm.weight.data().data();
  const double* pb = prm.bias.data().data();
  double* py = out.mutable_data().data();
  const auto& kt = simd::active();

#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < g.B * g.Co; ++bc) {
    const std::int64_t b = bc / g.Co, co = bc % g.Co;
    std::vector<double> acc(static_cast<std::size_t>(oplane), pb[co]);
    for (std::int64_t ci = 0; ci < g.Ci; ++ci) {
      const double* xb = xpad->data() + (b * g.Ci + ci) * pd.plane;
      const double* wk = pw + (co * g.Ci + ci) * taps;
      for (std::int64_t kz = 0; kz < g.KD; ++kz)
        for (std::int64_t ky = 0; ky < g.KH; ++ky)
          for (std::int64_t kx = 0; kx < g.KW; ++kx)
            kt.axpy(wk[(kz * g.KH + ky) * g.KW + kx], xb + pd.tap_offset(g, kz, ky, kx), acc.data(), span);
    }
    double* yb = py + bc * out_plane;
    for (std::int64_t od = 0; od < g.OD; ++od)
      for (std::int64_t oh = 0; oh < g.OH; ++oh)
        std::copy_n(acc.data() + pd.out_index(od, oh), g.OW, yb + (od * g.OH + oh) * g.OW);
  }

  const Tensor w = prm.weight, bias = prm.bias;
  record_op({x, w, bias}, out, [xpad, w, g, pd, oplane, out_plane, taps, span](const std::vector<Real>& grad, GradRefs& gin) {
    const double* pw = w.data().data();
    const auto& kt = simd::active();
    const std::vector<double> gpad = spread_output(grad.data(), g.B * g.Co, g, pd);
    if (gin[0]) {
      double* gx = gin[0]->data();
#pragma omp parallel for schedule(static)
      for (std::int64_t bci = 0; bci < g.B * g.Ci; ++bci) {
        const std::int64_t b = bci / g.Ci, ci = bci % g.Ci;
        std::vector<double> acc(static_cast<std::size_t>(pd.plane), 0.0);
        for (std::int64_t co = 0; co < g.Co; ++co) {
          const double* gb = gpad.data() + (b * g.Co + co) * oplane;
          const double* wk = pw + (co * g.Ci + ci) * taps;
          for (std::int64_t kz = 0; kz < g.KD; ++kz)
            for (std::int64_t ky = 0; ky < g.KH; ++ky)
              for (std::int64_t kx = 0; kx < g.KW; ++kx)
                kt.axpy(wk[(kz * g.KH + ky) * g.KW + kx], gb, acc.data() + pd.tap_offset(g, kz, ky, kx), span);
        }
        double* gxb = gx + bci * g.D * g.H * g.W;
        for (std::int64_t z = 0; z < g.D; ++z)
          for (std::int64_t y = 0; y < g.H; ++y) {
            const double* s = acc.data() + ((z + g.pd) * pd.Hp + y + g.p) * pd.Wp + g.p;
            double* d = gxb + (z * g.H + y) * g.W;
            for (std::int64_t j = 0; j < g.W; ++j) d[j] += s[j];
          }
      }
    }
    if (gin[1]) {
      double* gw = gin[1]->data();
#pragma omp parallel for schedule(static)
      for (std::int64_t co = 0; co < g.Co; ++co)
        for (std::int64_t ci = 0; ci < g.Ci; ++ci)
          for (std::int64_t kz = 0; kz < g.KD; ++kz)
            for (std::int64_t ky = 0; ky < g.KH; ++ky)
              for (std::int64_t kx = 0; kx < g.KW; ++kx) {
                const std::int64_t off = pd.tap_offset(g, kz, ky, kx);
                double acc = 0.0;
                for (std::int64_t b = 0; b < g.B; ++b)
                  acc += kt.dot(xpad->data() + (b * g.Ci + ci) * pd.plane + off,
                                gpad.data() + (b * g.Co + co) * oplane, span);
                gw[((co * g.Ci + ci) * g.KD + kz) * g.KH * g.KW + ky * g.KW + kx] += acc;
              }
    }
    if (gin[2]) {
      double* gbias = gin[2]->data();
      for (std::int64_t b = 0; b < g.B; ++b)
        for (std::int64_t co = 0; co < g.Co; ++co)
          gbias[co] += kt.sum(grad.data() + (b * g.Co + co) * out_plane, static_cast<std::size_t>(out_plane));
    }
  });
  return out;
}

}  // namespace

std::int64_t conv_out_size(std::int64_t in, int kernel, int stride, int padding, int dilation) {
  return floor_div(in + 2 * padding - static_cast<std::int64_t>(dilation) * (kernel - 1) - 1, stride) + 1;
}

ConvParams make_conv(int spatial_rank, std::int64_t in_ch, std::int64_t out_ch, int kernel,
                     std::uint64_t seed, int stride, int dilation, Real gain) {
  if (spatial_rank != 2 && spatial_rank != 3) throw ValidationError("spatial rank must be 2 or 3");
  if (kernel < 1 || kernel % 2 == 0) throw ValidationError("conv kernel size must be odd");
  Shape ws{out_ch, in_ch};
  for (int i = 0; i < spatial_rank; ++i) ws.push_back(kernel);
  const Real fan_in = static_cast<Real>(in_ch) * std::pow(kernel, spatial_rank);
  const Real bound = gain * std::sqrt(3.0 / fan_in);
  Rng rng(seed);
  std::vector<Real> w(static_cast<std::size_t>(shape_numel(ws)));
  for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
  ConvParams p;
  p.weight = Tensor(ws, std::move(w));
  p.bias = Tensor::zeros({out_ch});
  p.stride = stride;
  p.dilation = dilation;
  p.padding = dilation * (kernel - 1) / 2;
  return p;
}

Tensor conv(const Tensor& x, const ConvParams& prm) {
  const Geometry g = geometry(x, prm);
  Shape out_shape{g.B, g.Co};
  if (prm.spatial_rank() == 3) out_shape.push_back(g.OD);
  out_shape.push_back(g.OH);
  out_shape.push_back(g.OW);
  if (g.s == 1 && g.sd == 1) return conv_stride1(x, prm, g, out_shape);
  Tensor out = Tensor::zeros(out_shape);

  const double* px = x.data().data();
  const double* pw = prm.weight.data().data();
  const double* pb = prm.bias.data().data();
  double* py = out.mutable_data().data();
  const auto& kt = simd::active();
  const std::int64_t in_plane = g.D * g.H * g.W;
  const std::int64_t out_plane = g.OD * g.OH * g.OW;
  const std::int64_t taps = g.KD * g.KH * g.KW;

#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < g.B * g.Co; ++bc) {
    const std::int64_t b = bc / g.Co, co = bc % g.Co;
    double* yb = py + bc * out_plane;
    std::fill(yb, yb + out_plane, pb[co]);
    for (std::int64_t ci = 0; ci < g.Ci; ++ci) {
      const double* xb = px + (b * g.Ci + ci) * in_plane;
      const double* wk = pw + (co * g.Ci + ci) * taps;
      for (std::int64_t kz = 0; kz < g.KD; ++kz)
        for (std::int64_t ky = 0; ky < g.KH; ++ky)
          for (std::int64_t kx = 0; kx < g.KW; ++kx) {
            const double wv = wk[(kz * g.KH + ky) * g.KW + kx];
            std::int64_t lo, hi;
            g.col_range(kx, lo, hi);
            if (lo > hi) continue;
            const auto n = static_cast<std::size_t>(hi - lo + 1);
            for (std::int64_t od = 0; od < g.OD; ++od) {
              const std::int64_t iz = od * g.sd - g.pd + kz * g.dild;
              if (iz < 0 || iz >= g.D) continue;
              for (std::int64_t oh = 0; oh < g.OH; ++oh) {
                const std::int64_t iy = oh * g.s - g.p + ky * g.dil;
                if (iy < 0 || iy >= g.H) continue;
                const double* xr = xb + (iz * g.H + iy) * g.W + (lo * g.s - g.p + kx * g.dil);
                double* yr = yb + (od * g.OH + oh) * g.OW + lo;
                if (g.s == 1) {
                  kt.axpy(wv, xr, yr, n);
                } else {
                  kt.axpy_strided(wv, xr, static_cast<std::size_t>(g.s), yr, n);
                }
              }
            }
          }
    }
  }

  const Tensor xin = x, w = prm.weight, bias = prm.bias;
  record_op({x, w, bias}, out, [xin, w, g, in_plane, out_plane, taps](const std::vector<Real>& grad, GradRefs& gin) {
    const double* px = xin.data().data();
    const double* pw = w.data().data();
    const double* pg = grad.data();
    const auto& kt = simd::active();
    if (gin[0]) {
      double* gx = gin[0]->data();
#pragma omp parallel for schedule(static)
      for (std::int64_t bci = 0; bci < g.B * g.Ci; ++bci) {
        const std::int64_t b = bci / g.Ci, ci = bci % g.Ci;
        double* gxb = gx + bci * in_plane;
        for (std::int64_t co = 0; co < g.Co; ++co) {
          const double* gb = pg + (b * g.Co + co) * out_plane;
          const double* wk = pw + (co * g.Ci + ci) * taps;
          for (std::int64_t kz = 0; kz < g.KD; ++kz)
            for (std::int64_t ky = 0; ky < g.KH; ++ky)
              for (std::int64_t kx = 0; kx < g.KW; ++kx) {
                const double wv = wk[(kz * g.KH + ky) * g.KW + kx];
                std::int64_t lo, hi;
                g.col_range(kx, lo, hi);
                if (lo > hi) continue;
                const auto n = static_cast<std::size_t>(hi - lo + 1);
                for (std::int64_t od = 0; od < g.OD; ++od) {
                  const std::int64_t iz = od * g.sd - g.pd + kz * g.dild;
                  if (iz < 0 || iz >= g.D) continue;
                  for (std::int64_t oh = 0; oh < g.OH; ++oh) {
                    const std::int64_t iy = oh * g.s - g.p + ky * g.dil;
                    if (iy < 0 || iy >= g.H) continue;
                    double* xr = gxb + (iz * g.H + iy) * g.W + (lo * g.s - g.p + kx * g.dil);
                    const double* gr = gb + (od * g.OH + oh) * g.OW + lo;
                    if (g.s == 1) {
                      kt.axpy(wv, gr, xr, n);
                    } else {
                      for (std::size_t j = 0; j < n; ++j) xr[j * g.s] += wv * gr[j];
                    }
                  }
                }
              }
        }
      }
    }
    if (gin[1]) {
      double* gw = gin[1]->data();
#pragma omp parallel for schedule(static)
      for (std::int64_t co = 0; co < g.Co; ++co) {
        for (std::int64_t ci = 0; ci < g.Ci; ++ci) {
          double* gwk = gw + (co * g.Ci + ci) * taps;
          for (std::int64_t kz = 0; kz < g.KD; ++kz)
            for (std::int64_t ky = 0; ky < g.KH; ++ky)
              for (std::int64_t kx = 0; kx < g.KW; ++kx) {
                std::int64_t lo, hi;
                g.col_range(kx, lo, hi);
                if (lo > hi) continue;
                const auto n = static_cast<std::size_t>(hi - lo + 1);
                double acc = 0.0;
                for (std::int64_t b = 0; b < g.B; ++b) {
                  const double* xb = px + (b * g.Ci + ci) * in_plane;
                  const double* gb = pg + (b * g.Co + co) * out_plane;
                  for (std::int64_t od = 0; od < g.OD; ++od) {
                    const std::int64_t iz = od * g.sd - g.pd + kz * g.dild;
                    if (iz < 0 || iz >= g.D) continue;
                    for (std::int64_t oh = 0; oh < g.OH; ++oh) {
                      const std::int64_t iy = oh * g.s - g.p + ky * g.dil;
                      if (iy < 0 || iy >= g.H) continue;
                      const double* xr = xb + (iz * g.H + iy) * g.W + (lo * g.s - g.p + kx * g.dil);
                      const double* gr = gb + (od * g.OH + oh) * g.OW + lo;
                      if (g.s == 1) {
                        acc += kt.dot(xr, gr, n);
                      } else {
                        for (std::size_t j = 0; j < n; ++j) acc += xr[j * g.s] * gr[j];
                      }
                    }
                  }
                }
                gwk[(kz * g.KH + ky) * g.KW + kx] += acc;
              }
        }
      }
    }
    if (gin[2]) {
      double* gbias = gin[2]->data();
      for (std::int64_t b = 0; b < g.B; ++b)
        for (std::int64_t co = 0; co < g.Co; ++co)
          gbias[co] += kt.sum(pg + (b * g.Co + co) * out_plane, static_cast<std::size_t>(out_plane));
    }
  });
  return out;
}

Tensor global_pool(const Tensor& x, PoolMode mode) {
  if (x.rank() < 3) throw ShapeError("global_pool expects [B, C, spatial...], got " + shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1);
  const Tensor flat = ops::reshape(x, {B, C, static_cast<std::int64_t>(x.numel()) / (B * C)});
  return mode == PoolMode::Avg ? ops::mean(flat, {2}) : ops::max(flat, {2});
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear weight must be [d_in, d_out]");
  const std::int64_t din = w.dim(0), dout = w.dim(1);
  if (x.dim(-1) != din) {
    throw ShapeError("linear input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  }
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / din;
  Tensor y = ops::matmul(x.rank() == 2 ? x : ops::reshape(x, {rows, din}), w);
  if (b.defined()) {
    if (b.numel() != static_cast<std::size_t>(dout)) throw ShapeError("linear bias size mismatch");
    y = ops::add(y, b.rank() == 1 ? b : ops::reshape(b, {dout}));
  }
  if (x.rank() == 2) return y;
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  return ops::reshape(y, out_shape);
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, Real eps) {
  const std::int64_t d = x.dim(-1);
  if (scale.numel() != static_cast<std::size_t>(d) || shift.numel() != static_cast<std::size_t>(d)) {
    throw ShapeError("layer_norm scale/shift must have " + std::to_string(d) + " elements");
  }
  const std::int64_t rows = static_cast<std::int64_t>(x.numel()) / d;
  const double* px = x.data().data();
  const double* ps = scale.data().data();
  const double* pt = shift.data().data();
  std::vector<Real> xhat(x.numel());
  std::vector<Real> inv_std(static_cast<std::size_t>(rows));
  Tensor out = Tensor::zeros(x.shape());
  double* py = out.mutable_data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double mean = 0.0;
    for (std::int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const double xh = (xr[i] - mean) * is;
      xhat[static_cast<std::size_t>(r * d + i)] = xh;
      py[r * d + i] = xh * ps[i] + pt[i];
    }
  }
  const Tensor sc = scale;
  record_op({x, scale, shift}, out,
            [sc, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](const std::vector<Real>& g,
                                                                               GradRefs& gin) {
              const double* ps = sc.data().data();
              std::vector<double> gxh(static_cast<std::size_t>(d));
              for (std::int64_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xh = xhat.data() + r * d;
                if (gin[1])
                  for (std::int64_t i = 0; i < d; ++i) (*gin[1])[i] += gr[i] * xh[i];
                if (gin[2])
                  for (std::int64_t i = 0; i < d; ++i) (*gin[2])[i] += gr[i];
                if (!gin[0]) continue;
                double m1 = 0.0, m2 = 0.0;
                for (std::int64_t i = 0; i < d; ++i) {
                  gxh[i] = gr[i] * ps[i];
                  m1 += gxh[i];
                  m2 += gxh[i] * xh[i];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                double* gx = gin[0]->data() + r * d;
                const double is = inv_std[static_cast<std::size_t>(r)];
                for (std::int64_t i = 0; i < d; ++i) gx[i] += is * (gxh[i] - m1 - xh[i] * m2);
              }
            });
  return out;
}

Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::int64_t segment) {
  if (x.rank() != 2 || weight.rank() != 2) throw ShapeError("causal_conv1d expects x [L, C], weight [C, K]");
  const std::int64_t L = x.dim(0), C = x.dim(1), K = weight.dim(1);
  if (weight.dim(0) != C || bias.numel() != static_cast<std::size_t>(C)) {
    throw ShapeError("causal_conv1d channel mismatch");
  }
  const std::int64_t seg = segment <= 0 ? L : segment;
  if (L % seg != 0) throw ShapeError("causal_conv1d: length must be a multiple of the segment");
  Tensor out = Tensor::zeros({L, C});
  const double* px = x.data().data();
  const double* pw = weight.data().data();
  const double* pb = bias.data().data();
  double* py = out.mutable_data().data();
  for (std::int64_t t = 0; t < L; ++t) {
    const std::int64_t start = (t / seg) * seg;
    double* yr = py + t * C;
    for (std::int64_t c = 0; c < C; ++c) yr[c] = pb[c];
    for (std::int64_t k = 0; k < K; ++k) {
      const std::int64_t src = t - (K - 1) + k;
      if (src < start) continue;
      const double* xr = px + src * C;
      for (std::int64_t c = 0; c < C; ++c) yr[c] += pw[c * K + k] * xr[c];
    }
  }
  const Tensor xin = x, w = weight;
  record_op({x, weight, bias}, out, [xin, w, L, C, K, seg](const std::vector<Real>& g, GradRefs& gin) {
    const double* px = xin.data().data();
    const double* pw = w.data().data();
    for (std::int64_t t = 0; t < L; ++t) {
      const std::int64_t start = (t / seg) * seg;
      const double* gr = g.data() + t * C;
      if (gin[2])
        for (std::int64_t c = 0; c < C; ++c) (*gin[2])[c] += gr[c];
      for (std::int64_t k = 0; k < K; ++k) {
        const std::int64_t src = t - (K - 1) + k;
        if (src < start) continue;
        if (gin[0]) {
          double* gx = gin[0]->data() + src * C;
          for (std::int64_t c = 0; c < C; ++c) gx[c] += pw[c * K + k] * gr[c];
        }
        if (gin[1]) {
          const double* xr = px + src * C;
          for (std::int64_t c = 0; c < C; ++c) (*gin[1])[c * K + k] += gr[c] * xr[c];
        }
      }
    }
  });
  return out;
}

}  // namespace fmamba::nn
