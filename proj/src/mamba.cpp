#include "fmamba/mamba.hpp"

#include <cmath>

#include "fmamba/nn.hpp"
#include "fmamba/ops.hpp"
#include "fmamba/simd/kernels.hpp"
#include "fmamba/tape.hpp"

namespace fmamba {
namespace {

Tensor uniform_tensor(const Shape& shape, Real bound, Rng& rng) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
  return Tensor(shape, std::move(v));
}

std::int64_t spatial_size(const Tensor& x) {
  return static_cast<std::int64_t>(x.numel()) / (x.dim(0) * x.dim(1));
}

Shape spatial_of(const Tensor& x) { return Shape(x.shape().begin() + 2, x.shape().end()); }

// Runs one block over a token order of every batch item and scatters the
// result back to [B, C, S].
Tensor run_order(const Tensor& grid, const ScanOrder& order, const MambaBlockParams& blk,
                 std::int64_t segment) {
  const std::int64_t B = grid.dim(0);
  Tensor tokens = ops::gather_tokens(grid, order);
  Tensor y = mamba_block(tokens, blk, segment);
  return ops::scatter_tokens(y, order, B);
}

}  // namespace

void MambaBlockConfig::validate() const {
  if (d_model < 1 || expand < 1 || d_state < 1 || dconv_width < 1) {
    throw ValidationError("mamba block dims must all be >= 1");
  }
}

void SsmParams::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".a_log", &a_log);
  out.emplace_back(prefix + ".w_b", &w_b);
  out.emplace_back(prefix + ".w_c", &w_c);
  out.emplace_back(prefix + ".w_delta", &w_delta);
  out.emplace_back(prefix + ".b_delta", &b_delta);
  out.emplace_back(prefix + ".d", &d);
}

SsmParams make_ssm(std::int64_t d_inner, int d_state, std::uint64_t seed) {
  Rng rng(seed);
  SsmParams p;
  std::vector<Real> alog(static_cast<std::size_t>(d_inner * d_state));
  for (std::int64_t c = 0; c < d_inner; ++c)
    for (int n = 0; n < d_state; ++n) alog[static_cast<std::size_t>(c * d_state + n)] = std::log(n + 1.0);
  p.a_log = Tensor({d_inner, d_state}, std::move(alog));
  const Real bound = 1.0 / std::sqrt(static_cast<Real>(d_inner));
  p.w_b = uniform_tensor({d_inner, d_state}, bound, rng);
  p.w_c = uniform_tensor({d_inner, d_state}, bound, rng);
  p.w_delta = uniform_tensor({d_inner, d_inner}, 0.1 * bound, rng);
  // Step sizes log-uniform in [0.001, 0.1], stored through inverse softplus.
  std::vector<Real> bd(static_cast<std::size_t>(d_inner));
  for (auto& v : bd) {
    const Real dt = std::exp(std::log(0.001) + rng.uniform() * (std::log(0.1) - std::log(0.001)));
    v = dt + std::log(-std::expm1(-dt));
  }
  p.b_delta = Tensor({d_inner}, std::move(bd));
  p.d = Tensor::ones({d_inner});
  return p;
}

void MambaBlockParams::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".ln_scale", &ln_scale);
  out.emplace_back(prefix + ".ln_shift", &ln_shift);
  out.emplace_back(prefix + ".in_proj", &in_proj);
  out.emplace_back(prefix + ".conv_w", &conv_w);
  out.emplace_back(prefix + ".conv_b", &conv_b);
  ssm.collect(prefix + ".ssm", out);
  out.emplace_back(prefix + ".out_proj", &out_proj);
}

MambaBlockParams make_mamba_block(const MambaBlockConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::int64_t dm = cfg.d_model, di = cfg.d_inner();
  MambaBlockParams p;
  p.cfg = cfg;
  p.ln_scale = Tensor::ones({dm});
  p.ln_shift = Tensor::zeros({dm});
  p.in_proj = uniform_tensor({dm, 2 * di}, std::sqrt(3.0 / static_cast<Real>(dm)), rng);
  p.conv_w = uniform_tensor({di, cfg.dconv_width}, std::sqrt(3.0 / cfg.dconv_width), rng);
  p.conv_b = Tensor::zeros({di});
  p.ssm = make_ssm(di, cfg.d_state, derive_seed(seed, 1));
  p.out_proj = uniform_tensor({di, dm}, 0.5 * std::sqrt(3.0 / static_cast<Real>(di)), rng);
  return p;
}

void FusionMambaParams::collect(const std::string& prefix, NamedParams& out) {
  ssm_a.collect(prefix + ".ssm_a", out);
  ssm_b.collect(prefix + ".ssm_b", out);
  out.emplace_back(prefix + ".gate_a_w", &gate_a_w);
  out.emplace_back(prefix + ".gate_a_b", &gate_a_b);
  out.emplace_back(prefix + ".gate_b_w", &gate_b_w);
  out.emplace_back(prefix + ".gate_b_b", &gate_b_b);
  out.emplace_back(prefix + ".out_w", &out_w);
  out.emplace_back(prefix + ".out_b", &out_b);
}

FusionMambaParams make_fusion_mamba(std::int64_t d, int d_state, std::uint64_t seed) {
  if (d < 1 || d_state < 1) throw ValidationError("fusion_mamba dims must be >= 1");
  Rng rng(seed);
  const Real bound = std::sqrt(3.0 / static_cast<Real>(d));
  FusionMambaParams p;
  p.ssm_a = make_ssm(d, d_state, derive_seed(seed, 1));
  p.ssm_b = make_ssm(d, d_state, derive_seed(seed, 2));
  p.gate_a_w = uniform_tensor({d, d}, bound, rng);
  p.gate_a_b = Tensor::zeros({d});
  p.gate_b_w = uniform_tensor({d, d}, bound, rng);
  p.gate_b_b = Tensor::zeros({d});
  p.out_w = uniform_tensor({d, d}, 0.5 * bound, rng);
  p.out_b = Tensor::zeros({d});
  return p;
}

std::pair<Tensor, Tensor> discretize(const Tensor& a, const Tensor& b_t, const Tensor& delta_t) {
  if (a.rank() != 2) throw ShapeError("discretize expects A [d_inner, d_state]");
  const std::int64_t C = a.dim(0), N = a.dim(1);
  if (b_t.numel() != static_cast<std::size_t>(N) || delta_t.numel() != static_cast<std::size_t>(C)) {
    throw ShapeError("discretize: B must have d_state and delta d_inner elements");
  }
  Tensor decay = Tensor::zeros({C, N});
  Tensor gain = Tensor::zeros({C, N});
  auto pd = decay.mutable_data();
  auto pg = gain.mutable_data();
  for (std::int64_t c = 0; c < C; ++c) {
    const Real dl = delta_t.data()[static_cast<std::size_t>(c)];
    if (!(dl > 0.0)) throw NumericalError("discretize: step size must be positive");
    for (std::int64_t n = 0; n < N; ++n) {
      const auto k = static_cast<std::size_t>(c * N + n);
      pd[k] = simd::exp_reference(dl * a.data()[k]);
      pg[k] = dl * b_t.data()[static_cast<std::size_t>(n)];
    }
  }
  // Both outputs go through one recorded op on their concatenation.
  Tensor joint = ops::concat({decay, gain}, 0);
  const Tensor dec = decay;
  record_op({a, b_t, delta_t}, joint, [a, b_t, delta_t, dec, C, N](const std::vector<Real>& g, GradRefs& gin) {
    const auto pa = a.data(), pb = b_t.data(), pdl = delta_t.data(), pdec = dec.data();
    for (std::int64_t c = 0; c < C; ++c) {
      const Real dl = pdl[static_cast<std::size_t>(c)];
      for (std::int64_t n = 0; n < N; ++n) {
        const auto k = static_cast<std::size_t>(c * N + n);
        const Real gd = g[k], gg = g[static_cast<std::size_t>(C * N) + k];
        if (gin[0]) (*gin[0])[k] += gd * pdec[k] * dl;
        if (gin[1]) (*gin[1])[static_cast<std::size_t>(n)] += gg * dl;
        if (gin[2]) (*gin[2])[static_cast<std::size_t>(c)] += gd * pdec[k] * pa[k] + gg * pb[static_cast<std::size_t>(n)];
      }
    }
  });
  return {ops::slice(joint, 0, 0, C), ops::slice(joint, 0, C, C)};
}

Tensor selective_scan_raw(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                          const Tensor& c, const Tensor& d, std::int64_t segment) {
  if (u.rank() != 2 || a.rank() != 2) throw ShapeError("selective_scan expects u [L, C], A [C, N]");
  const std::int64_t L = u.dim(0), C = u.dim(1), N = a.dim(1);
  if (delta.shape() != u.shape() || a.dim(0) != C || b.shape() != Shape{L, N} ||
      c.shape() != Shape{L, N} || d.numel() != static_cast<std::size_t>(C)) {
    throw ShapeError("selective_scan operand shapes inconsistent with u " + shape_str(u.shape()));
  }
  std::vector<Real> a_t(static_cast<std::size_t>(N * C));
  for (std::int64_t i = 0; i < C; ++i)
    for (std::int64_t n = 0; n < N; ++n) a_t[static_cast<std::size_t>(n * C + i)] = a.data()[static_cast<std::size_t>(i * N + n)];

  simd::ScanForwardArgs args;
  args.length = static_cast<std::size_t>(L);
  args.channels = static_cast<std::size_t>(C);
  args.state = static_cast<std::size_t>(N);
  args.segment = segment > 0 ? static_cast<std::size_t>(segment) : 0;
  args.u = u.data().data();
  args.delta = delta.data().data();
  args.a_t = a_t.data();
  args.b = b.data().data();
  args.c = c.data().data();
  args.d = d.data().data();
  Tensor out = Tensor::zeros({L, C});
  args.y = out.mutable_data().data();

  const bool track = active_tape() && any_tracked({&u, &delta, &a, &b, &c, &d});
  auto h_all = std::make_shared<std::vector<Real>>();
  if (track) {
    h_all->assign(static_cast<std::size_t>(L * N * C), 0.0);
    args.h_all = h_all->data();
  }
  simd::active().scan_forward(args);
  if (!track) return out;

  record_op({u, delta, a, b, c, d}, out,
            [u, delta, b, c, d, a_t = std::move(a_t), h_all, args, L, C, N](const std::vector<Real>& g,
                                                                           GradRefs& gin) {
              simd::ScanBackwardArgs bw;
              bw.fwd = args;
              bw.fwd.u = u.data().data();
              bw.fwd.delta = delta.data().data();
              bw.fwd.a_t = a_t.data();
              bw.fwd.b = b.data().data();
              bw.fwd.c = c.data().data();
              bw.fwd.d = d.data().data();
              bw.fwd.y = nullptr;
              bw.fwd.h_all = nullptr;
              bw.grad_y = g.data();
              bw.h_all = h_all->data();
              std::vector<Real> gu(static_cast<std::size_t>(L * C)), gdl(gu.size());
              std::vector<Real> ga_t(static_cast<std::size_t>(N * C)), gb(static_cast<std::size_t>(L * N)),
                  gc(gb.size()), gd(static_cast<std::size_t>(C));
              bw.grad_u = gu.data();
              bw.grad_delta = gdl.data();
              bw.grad_a_t = ga_t.data();
              bw.grad_b = gb.data();
              bw.grad_c = gc.data();
              bw.grad_d = gd.data();
              simd::active().scan_backward(bw);
              auto acc = [](std::vector<Real>* dst, const std::vector<Real>& src) {
                if (!dst) return;
                for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
              };
              acc(gin[0], gu);
              acc(gin[1], gdl);
              if (gin[2]) {
                for (std::int64_t i = 0; i < C; ++i)
                  for (std::int64_t n = 0; n < N; ++n)
                    (*gin[2])[static_cast<std::size_t>(i * N + n)] += ga_t[static_cast<std::size_t>(n * C + i)];
              }
              acc(gin[3], gb);
              acc(gin[4], gc);
              acc(gin[5], gd);
            });
  return out;
}

Tensor selective_scan(const Tensor& u, const SsmParams& p, std::int64_t segment) {
  if (u.rank() != 2 || u.dim(1) != p.d_inner()) {
    throw ShapeError("selective_scan input " + shape_str(u.shape()) + " does not match d_inner " +
                     std::to_string(p.d_inner()));
  }
  const Tensor b = ops::matmul(u, p.w_b);
  const Tensor c = ops::matmul(u, p.w_c);
  const Tensor delta = ops::softplus(nn::linear(u, p.w_delta, p.b_delta));
  const Tensor a = ops::neg(ops::exp(p.a_log));
  return selective_scan_raw(u, delta, a, b, c, p.d, segment);
}

Tensor mamba_block(const Tensor& tokens, const MambaBlockParams& p, std::int64_t segment) {
  const std::int64_t dm = p.cfg.d_model, di = p.cfg.d_inner();
  if (tokens.rank() != 2 || tokens.dim(1) != dm) {
    throw ShapeError("mamba_block expects [L, " + std::to_string(dm) + "], got " + shape_str(tokens.shape()));
  }
  const Tensor normed = nn::layer_norm(tokens, p.ln_scale, p.ln_shift);
  const Tensor xz = ops::matmul(normed, p.in_proj);
  const Tensor x = ops::slice(xz, 1, 0, di);
  const Tensor z = ops::slice(xz, 1, di, di);
  const Tensor xc = ops::silu(nn::causal_conv1d(x, p.conv_w, p.conv_b, segment));
  const Tensor y = selective_scan(xc, p.ssm, segment);
  const Tensor gated = ops::mul(y, ops::silu(z));
  return ops::add(tokens, ops::matmul(gated, p.out_proj));
}

Tensor fusion_mamba(const Tensor& a, const Tensor& b, const FusionMambaParams& p, std::int64_t segment) {
  if (a.shape() != b.shape() || a.rank() != 2) {
    throw ShapeError("fusion_mamba inputs must share a [L, d] shape: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const Tensor ya = ops::mul(selective_scan(a, p.ssm_a, segment), ops::sigmoid(nn::linear(b, p.gate_a_w, p.gate_a_b)));
  const Tensor yb = ops::mul(selective_scan(b, p.ssm_b, segment), ops::sigmoid(nn::linear(a, p.gate_b_w, p.gate_b_b)));
  const Tensor mixed = nn::linear(ops::add(ya, yb), p.out_w, p.out_b);
  return ops::add(mixed, ops::mul_scalar(ops::add(a, b), 0.5));
}

std::string_view strategy_name(ScanStrategy s) {
  switch (s) {
    case ScanStrategy::FourDir: return "four_dir";
    case ScanStrategy::Triplane: return "triplane";
    case ScanStrategy::Planar2d: return "planar2d";
  }
  return "?";
}

ScanStrategy parse_strategy(std::string_view s) {
  if (s == "four_dir") return ScanStrategy::FourDir;
  if (s == "triplane") return ScanStrategy::Triplane;
  if (s == "planar2d") return ScanStrategy::Planar2d;
  throw ValidationError("unknown scan strategy '" + std::string(s) + "' (four_dir|triplane|planar2d)");
}

void DirectionalParams::collect(const std::string& prefix, NamedParams& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  for (std::size_t i = 0; i < merges.size(); ++i) merges[i].collect(prefix + ".merge" + std::to_string(i), out);
}

DirectionalParams make_directional(ScanStrategy strategy, const MambaBlockConfig& cfg, bool reverse_planes,
                                   std::uint64_t seed) {
  DirectionalParams p;
  p.strategy = strategy;
  p.reverse_planes = strategy == ScanStrategy::Triplane && reverse_planes;
  std::size_t n_blocks = 0, n_merges = 0;
  switch (strategy) {
    case ScanStrategy::FourDir: n_blocks = 4; break;
    case ScanStrategy::Triplane: n_blocks = p.reverse_planes ? 6 : 3; n_merges = 2; break;
    case ScanStrategy::Planar2d: n_blocks = 2; n_merges = 1; break;
  }
  for (std::size_t i = 0; i < n_blocks; ++i) p.blocks.push_back(make_mamba_block(cfg, derive_seed(seed, i)));
  for (std::size_t i = 0; i < n_merges; ++i)
    p.merges.push_back(make_fusion_mamba(cfg.d_model, cfg.d_state, derive_seed(seed, 100 + i)));
  return p;
}

MergeLayout merge_layout(ScanStrategy strategy, const Shape& spatial) {
  const std::int64_t S = shape_numel(spatial);
  switch (strategy) {
    case ScanStrategy::FourDir:
      if (spatial.size() != 2) throw ShapeError("four_dir scanning needs 2D feature maps");
      return {scan_order_2d(spatial[0], spatial[1], ScanDirection::LR), S};
    case ScanStrategy::Triplane:
      if (spatial.size() != 3) throw ShapeError("triplane scanning needs 3D feature maps");
      return {scan_order_3d(spatial[0], spatial[1], spatial[2], Plane::Axial), S};
    case ScanStrategy::Planar2d:
      if (spatial.size() != 3) throw ShapeError("planar2d scanning needs 3D feature maps");
      return {planar_order(spatial[0], spatial[1], spatial[2], ScanDirection::LR), spatial[1] * spatial[2]};
  }
  throw Error("unknown scan strategy");
}

Tensor fuse_maps(const Tensor& f1, const Tensor& f2, const FusionMambaParams& p, ScanStrategy strategy) {
  if (f1.shape() != f2.shape()) {
    throw ShapeError("fuse_maps shape mismatch: " + shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
  }
  const std::int64_t B = f1.dim(0), C = f1.dim(1), S = spatial_size(f1);
  const MergeLayout lay = merge_layout(strategy, spatial_of(f1));
  const Tensor t1 = ops::gather_tokens(ops::reshape(f1, {B, C, S}), lay.order);
  const Tensor t2 = ops::gather_tokens(ops::reshape(f2, {B, C, S}), lay.order);
  const Tensor fused = fusion_mamba(t1, t2, p, lay.segment);
  return ops::reshape(ops::scatter_tokens(fused, lay.order, B), f1.shape());
}

Tensor directional_forward(const Tensor& x, const DirectionalParams& p) {
  const std::int64_t B = x.dim(0), C = x.dim(1), S = spatial_size(x);
  const Shape sp = spatial_of(x);
  const Tensor grid = ops::reshape(x, {B, C, S});
  switch (p.strategy) {
    case ScanStrategy::FourDir: {
      if (sp.size() != 2) throw ShapeError("four_dir scanning needs [B, C, H, W], got " + shape_str(x.shape()));
      const ScanDirection dirs[] = {ScanDirection::LR, ScanDirection::RL, ScanDirection::TB, ScanDirection::BT};
      Tensor acc;
      for (int i = 0; i < 4; ++i) {
        Tensor y = run_order(grid, scan_order_2d(sp[0], sp[1], dirs[i]), p.blocks[static_cast<std::size_t>(i)], S);
        acc = acc.defined() ? ops::add(acc, y) : y;
      }
      return ops::reshape(ops::mul_scalar(acc, 0.25), x.shape());
    }
    case ScanStrategy::Triplane: {
      if (sp.size() != 3) throw ShapeError("triplane scanning needs [B, C, D, H, W], got " + shape_str(x.shape()));
      const Plane planes[] = {Plane::Axial, Plane::Coronal, Plane::Sagittal};
      std::vector<Tensor> per_plane;
      for (int i = 0; i < 3; ++i) {
        Tensor y = run_order(grid, scan_order_3d(sp[0], sp[1], sp[2], planes[i]), p.blocks[static_cast<std::size_t>(i)], S);
        if (p.reverse_planes) {
          Tensor r = run_order(grid, scan_order_3d(sp[0], sp[1], sp[2], planes[i], true),
                               p.blocks[static_cast<std::size_t>(3 + i)], S);
          y = ops::mul_scalar(ops::add(y, r), 0.5);
        }
        per_plane.push_back(ops::reshape(y, x.shape()));
      }
      const Tensor m = fuse_maps(per_plane[0], per_plane[1], p.merges[0], p.strategy);
      return fuse_maps(m, per_plane[2], p.merges[1], p.strategy);
    }
    case ScanStrategy::Planar2d: {
      if (sp.size() != 3) throw ShapeError("planar2d scanning needs [B, C, D, H, W], got " + shape_str(x.shape()));
      const std::int64_t slice = sp[1] * sp[2];
      Tensor lr = run_order(grid, planar_order(sp[0], sp[1], sp[2], ScanDirection::LR), p.blocks[0], slice);
      Tensor tb = run_order(grid, planar_order(sp[0], sp[1], sp[2], ScanDirection::TB), p.blocks[1], slice);
      return fuse_maps(ops::reshape(lr, x.shape()), ops::reshape(tb, x.shape()), p.merges[0], p.strategy);
    }
  }
  throw Error("unknown scan strategy");
}

Tensor vss_2d(const Tensor& fmap, const DirectionalParams& p) {
  if (fmap.rank() != 3) throw ShapeError("vss_2d expects [C, H, W]");
  Shape batched = fmap.shape();
  batched.insert(batched.begin(), 1);
  return ops::reshape(directional_forward(ops::reshape(fmap, batched), p), fmap.shape());
}

Tensor triplane_3d(const Tensor& vol, const DirectionalParams& p) {
  if (vol.rank() != 4) throw ShapeError("triplane_3d expects [C, D, H, W]");
  Shape batched = vol.shape();
  batched.insert(batched.begin(), 1);
  return ops::reshape(directional_forward(ops::reshape(vol, batched), p), vol.shape());
}

}  // namespace fmamba
