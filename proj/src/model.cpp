#include "fmamba/model.hpp"

#include <cmath>
#include <utility>

#include "fmamba/ops.hpp"

namespace fmamba {
namespace {

bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }

int log2i(int v) {
  int k = 0;
  while ((1 << k) < v) ++k;
  return k;
}

Tensor lrelu(const Tensor& x) { return ops::leaky_relu(x, ops::kLeakySlope); }

void collect_conv(const std::string& prefix, nn::ConvParams& c, NamedParams& out) {
  out.emplace_back(prefix + ".weight", &c.weight);
  out.emplace_back(prefix + ".bias", &c.bias);
}

// Channel counts of the N pyramid branches; earlier branches take the
// remainder when C is not a multiple of N.
std::vector<std::int64_t> branch_widths(std::int64_t channels, std::size_t n) {
  std::vector<std::int64_t> w(n, channels / static_cast<std::int64_t>(n));
  for (std::size_t i = 0; i < static_cast<std::size_t>(channels % static_cast<std::int64_t>(n)); ++i) ++w[i];
  return w;
}

void swap_fusion_halves(FusionMambaParams& p) {
  std::swap(p.ssm_a, p.ssm_b);
  std::swap(p.gate_a_w, p.gate_b_w);
  std::swap(p.gate_a_b, p.gate_b_b);
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("model config: " + msg); };
  if (dims != 2 && dims != 3) fail("dims must be 2 or 3");
  if (in_channels != 1) fail("in_channels must be 1");
  if (stem_channels < 1) fail("stem_channels must be >= 1");
  if (latent_channels < 1) fail("latent_channels must be >= 1");
  if (dgcb_blocks < 0) fail("dgcb_blocks must be >= 0");
  if (dgcb_dilations.empty()) fail("dgcb_dilations must be non-empty");
  for (int d : dgcb_dilations)
    if (d < 1) fail("dgcb_dilations values must be >= 1");
  if (static_cast<std::int64_t>(dgcb_dilations.size()) > latent_channels) {
    fail("latent_channels must be >= the number of dilation branches");
  }
  if (k_mamba < 1) fail("k_mamba must be >= 1");
  if (scan_strategy == ScanStrategy::FourDir && dims != 2) fail("scan_strategy four_dir requires dims=2");
  if (scan_strategy != ScanStrategy::FourDir && dims != 3) {
    fail("scan_strategy " + std::string(strategy_name(scan_strategy)) + " requires dims=3");
  }
  if (dims == 3 && !is_pow2(downsample_3d)) fail("downsample_3d must be a power of two");
  if (decoder_layers < 0) fail("decoder_layers must be >= 0");
  if (decoder_min_channels < 1) fail("decoder_min_channels must be >= 1");
  if (cmca_reduction < 1 || latent_channels % cmca_reduction != 0) {
    fail("latent_channels must be divisible by cmca_reduction");
  }
  mamba_config().validate();
}

MambaBlockConfig ModelConfig::mamba_config() const {
  MambaBlockConfig m;
  m.d_model = latent_channels;
  m.expand = mamba_expand;
  m.d_state = mamba_d_state;
  m.dconv_width = mamba_dconv;
  return m;
}

void DgcbParams::collect(const std::string& prefix, NamedParams& out) {
  collect_conv(prefix + ".gate3", gate3, out);
  collect_conv(prefix + ".gate1", gate1, out);
  for (std::size_t i = 0; i < branches.size(); ++i) collect_conv(prefix + ".branch" + std::to_string(i), branches[i], out);
  collect_conv(prefix + ".merge", merge, out);
}

void EncoderParams::collect(const std::string& prefix, NamedParams& out) {
  collect_conv(prefix + ".stem", stem, out);
  collect_conv(prefix + ".expand", expand, out);
  for (std::size_t i = 0; i < down.size(); ++i) collect_conv(prefix + ".down" + std::to_string(i), down[i], out);
  for (std::size_t i = 0; i < dgcbs.size(); ++i) dgcbs[i].collect(prefix + ".dgcb" + std::to_string(i), out);
}

void CmcaParams::collect(const std::string& prefix, NamedParams& out) {
  out.emplace_back(prefix + ".w1", &w1);
  out.emplace_back(prefix + ".w2", &w2);
}

void LatentStage::collect(const std::string& prefix, NamedParams& out) {
  stream[0].collect(prefix + ".stream0", out);
  stream[1].collect(prefix + ".stream1", out);
  merge.collect(prefix + ".merge", out);
}

void DecoderParams::collect(const std::string& prefix, NamedParams& out) {
  if (cmca[0].w1.defined()) {
    cmca[0].collect(prefix + ".cmca0", out);
    cmca[1].collect(prefix + ".cmca1", out);
  }
  for (std::size_t i = 0; i < layers.size(); ++i) collect_conv(prefix + ".layer" + std::to_string(i), layers[i], out);
  for (std::size_t i = 0; i < up.size(); ++i) collect_conv(prefix + ".up" + std::to_string(i), up[i], out);
  collect_conv(prefix + ".out", this->out, out);
}

NamedParams FusionModel::named_parameters() {
  NamedParams out;
  enc[0].collect("enc0", out);
  enc[1].collect("enc1", out);
  for (std::size_t k = 0; k < stages.size(); ++k) stages[k].collect("latent" + std::to_string(k), out);
  dec.collect("dec", out);
  return out;
}

std::int64_t FusionModel::param_count() { return count_params(named_parameters()); }

DgcbParams make_dgcb(int spatial_rank, std::int64_t channels, const std::vector<int>& dilations,
                     std::uint64_t seed) {
  if (dilations.empty() || static_cast<std::int64_t>(dilations.size()) > channels) {
    throw ValidationError("dgcb needs 1..C dilation branches");
  }
  DgcbParams p;
  p.gate3 = nn::make_conv(spatial_rank, channels, channels, 3, derive_seed(seed, 0));
  p.gate1 = nn::make_conv(spatial_rank, channels, channels, 1, derive_seed(seed, 1));
  const auto widths = branch_widths(channels, dilations.size());
  for (std::size_t i = 0; i < dilations.size(); ++i) {
    p.branches.push_back(nn::make_conv(spatial_rank, channels, widths[i], 3, derive_seed(seed, 2 + i), 1, dilations[i]));
  }
  p.merge = nn::make_conv(spatial_rank, channels, channels, 1, derive_seed(seed, 99), 1, 1, 0.5);
  return p;
}

Tensor dgcb_forward(const Tensor& x, const DgcbParams& p) {
  if (x.dim(1) != p.gate3.in_channels()) {
    throw ShapeError("dgcb channel mismatch: input " + shape_str(x.shape()));
  }
  const Tensor g = ops::mul(nn::conv(x, p.gate3), nn::conv(x, p.gate1));
  std::vector<Tensor> parts;
  for (const auto& br : p.branches) parts.push_back(nn::conv(g, br));
  const Tensor pyramid = parts.size() == 1 ? parts[0] : ops::concat(parts, 1);
  return ops::add(x, lrelu(nn::conv(pyramid, p.merge)));
}

CmcaParams make_cmca(std::int64_t channels, int reduction, std::uint64_t seed) {
  if (reduction < 1 || channels % reduction != 0) throw ValidationError("cmca: channels must be divisible by reduction");
  const std::int64_t hidden = channels / reduction;
  Rng rng(seed);
  auto init = [&](const Shape& s, Real fan_in) {
    std::vector<Real> v(static_cast<std::size_t>(shape_numel(s)));
    const Real bound = std::sqrt(3.0 / fan_in);
    for (auto& x : v) x = (2.0 * rng.uniform() - 1.0) * bound;
    return Tensor(s, std::move(v));
  };
  CmcaParams p;
  p.w1 = init({channels, hidden}, static_cast<Real>(channels));
  p.w2 = init({hidden, channels}, static_cast<Real>(hidden));
  return p;
}

Tensor cmca(const Tensor& ref, const Tensor& query, const CmcaParams& p) {
  if (ref.shape() != query.shape()) {
    throw ShapeError("cmca shape mismatch: " + shape_str(ref.shape()) + " vs " + shape_str(query.shape()));
  }
  auto mlp = [&](const Tensor& v) { return ops::matmul(ops::relu(ops::matmul(v, p.w1)), p.w2); };
  const Tensor avg = nn::global_pool(ref, nn::PoolMode::Avg);
  const Tensor mx = nn::global_pool(ref, nn::PoolMode::Max);
  const Tensor w = ops::sigmoid(ops::add(mlp(avg), mlp(mx)));
  Shape bshape(query.rank(), 1);
  bshape[0] = query.dim(0);
  bshape[1] = query.dim(1);
  return ops::mul(query, ops::reshape(w, bshape));
}

FusionModel build_model(const ModelConfig& cfg) {
  cfg.validate();
  FusionModel m;
  m.cfg = cfg;
  const int sr = cfg.dims;
  const std::uint64_t seed = cfg.init_seed;
  const std::int64_t C = cfg.latent_channels;
  for (int mod = 0; mod < 2; ++mod) {
    const std::uint64_t s = derive_seed(seed, 10 + static_cast<std::uint64_t>(mod));
    EncoderParams& e = m.enc[mod];
    e.stem = nn::make_conv(sr, cfg.in_channels, cfg.stem_channels, 3, derive_seed(s, 0));
    const int downs = sr == 3 ? log2i(cfg.downsample_3d) : 0;
    e.expand = nn::make_conv(sr, cfg.stem_channels, C, 3, derive_seed(s, 1), downs > 0 ? 2 : 1);
    for (int i = 1; i < downs; ++i) e.down.push_back(nn::make_conv(sr, C, C, 3, derive_seed(s, 10 + static_cast<std::uint64_t>(i)), 2));
    for (int i = 0; i < cfg.dgcb_blocks; ++i) {
      e.dgcbs.push_back(make_dgcb(sr, C, cfg.dgcb_dilations, derive_seed(s, 100 + static_cast<std::uint64_t>(i))));
    }
  }
  const MambaBlockConfig mc = cfg.mamba_config();
  for (int k = 0; k < cfg.k_mamba; ++k) {
    const std::uint64_t s = derive_seed(seed, 100 + static_cast<std::uint64_t>(k));
    LatentStage st;
    st.stream[0] = make_directional(cfg.scan_strategy, mc, cfg.triplane_reverse, derive_seed(s, 0));
    st.stream[1] = make_directional(cfg.scan_strategy, mc, cfg.triplane_reverse, derive_seed(s, 1));
    st.merge = make_fusion_mamba(C, cfg.mamba_d_state, derive_seed(s, 2));
    m.stages.push_back(std::move(st));
  }
  const std::uint64_t ds = derive_seed(seed, 1000);
  if (cfg.cmca_enabled) {
    m.dec.cmca[0] = make_cmca(C, cfg.cmca_reduction, derive_seed(ds, 0));
    m.dec.cmca[1] = make_cmca(C, cfg.cmca_reduction, derive_seed(ds, 1));
  }
  std::int64_t ch = C;
  for (int i = 0; i < cfg.decoder_layers; ++i) {
    const std::int64_t next = std::max<std::int64_t>(cfg.decoder_min_channels, ch / 2);
    m.dec.layers.push_back(nn::make_conv(sr, ch, next, 3, derive_seed(ds, 10 + static_cast<std::uint64_t>(i))));
    ch = next;
  }
  for (int i = 0; i < log2i(cfg.reduction()); ++i) {
    const std::int64_t next = std::max<std::int64_t>(cfg.decoder_min_channels, ch / 2);
    m.dec.up.push_back(nn::make_conv(sr, ch, next, 3, derive_seed(ds, 100 + static_cast<std::uint64_t>(i))));
    ch = next;
  }
  m.dec.out = nn::make_conv(sr, ch, 1, 1, derive_seed(ds, 999));
  return m;
}

FusionModel swap_modalities(const FusionModel& model) {
  FusionModel m = model;
  std::swap(m.enc[0], m.enc[1]);
  for (auto& st : m.stages) {
    std::swap(st.stream[0], st.stream[1]);
    swap_fusion_halves(st.merge);
  }
  std::swap(m.dec.cmca[0], m.dec.cmca[1]);
  return m;
}

Tensor encode(const Tensor& x, int modality, const FusionModel& m) {
  const ModelConfig& cfg = m.cfg;
  if (modality != 0 && modality != 1) throw ValidationError("modality index must be 0 or 1");
  if (static_cast<int>(x.rank()) != cfg.dims + 2 || x.dim(1) != cfg.in_channels) {
    throw ShapeError("encoder expects [B, 1, " + std::string(cfg.dims == 3 ? "D, H, W" : "H, W") + "], got " +
                     shape_str(x.shape()));
  }
  if (cfg.dims == 3) {
    for (std::size_t i = 2; i < x.rank(); ++i) {
      if (x.shape()[i] % cfg.downsample_3d != 0) {
        throw ShapeError("volume dims " + shape_str(x.shape()) + " must be divisible by downsample_3d=" +
                         std::to_string(cfg.downsample_3d));
      }
    }
  }
  if (ops::check_finite_enabled()) {
    for (Real v : x.data())
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("encoder input values must lie in [0, 1]");
  }
  const EncoderParams& e = m.enc[modality];
  Tensor h = lrelu(nn::conv(x, e.stem));
  h = lrelu(nn::conv(h, e.expand));
  for (const auto& d : e.down) h = lrelu(nn::conv(h, d));
  for (const auto& b : e.dgcbs) h = dgcb_forward(h, b);
  return h;
}

LatentResult latent_fuse(const Tensor& f1, const Tensor& f2, const FusionModel& m) {
  if (f1.shape() != f2.shape()) {
    throw ShapeError("latent_fuse shape mismatch: " + shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
  }
  LatentResult r{Tensor(), f1, f2};
  for (const auto& st : m.stages) {
    r.f1 = directional_forward(r.f1, st.stream[0]);
    r.f2 = directional_forward(r.f2, st.stream[1]);
    Tensor fk = fuse_maps(r.f1, r.f2, st.merge, m.cfg.scan_strategy);
    r.fused = r.fused.defined() ? ops::add(r.fused, fk) : fk;
  }
  if (m.stages.size() > 1) r.fused = ops::mul_scalar(r.fused, 1.0 / static_cast<Real>(m.stages.size()));
  return r;
}

Tensor decode(const LatentResult& lat, const FusionModel& m) {
  Tensor e = lat.fused;
  if (m.cfg.cmca_enabled) {
    const Tensor a = cmca(lat.f1, lat.f2, m.dec.cmca[0]);
    const Tensor b = cmca(lat.f2, lat.f1, m.dec.cmca[1]);
    e = ops::add(e, ops::add(a, b));
  }
  for (const auto& l : m.dec.layers) e = lrelu(nn::conv(e, l));
  for (const auto& u : m.dec.up) e = lrelu(nn::conv(ops::upsample_nearest(e, 2), u));
  return ops::sigmoid(nn::conv(e, m.dec.out));
}

Tensor forward_fuse(const Tensor& x1, const Tensor& x2, const FusionModel& m) {
  if (x1.shape() != x2.shape()) {
    throw ShapeError("modalities must share a shape: " + shape_str(x1.shape()) + " vs " + shape_str(x2.shape()));
  }
  return decode(latent_fuse(encode(x1, 0, m), encode(x2, 1, m), m), m);
}

}  // namespace fmamba
