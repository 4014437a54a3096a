#pragma once
// Selective state-space blocks and the directional wrappers that run them
// over 2D/3D feature maps.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fmamba/params.hpp"
#include "fmamba/scan_order.hpp"
#include "fmamba/tensor.hpp"

namespace fmamba {

struct MambaBlockConfig {
  std::int64_t d_model = 16;
  int expand = 2;
  int d_state = 16;
  int dconv_width = 4;

  std::int64_t d_inner() const { return expand * d_model; }
  void validate() const;
};

/// A is stored as A_log with A = -exp(A_log), so every decay factor lies in (0, 1).
struct SsmParams {
  Tensor a_log;    // [d_inner, d_state]
  Tensor w_b;      // [d_inner, d_state]
  Tensor w_c;      // [d_inner, d_state]
  Tensor w_delta;  // [d_inner, d_inner]
  Tensor b_delta;  // [d_inner]
  Tensor d;        // [d_inner]

  std::int64_t d_inner() const { return a_log.dim(0); }
  std::int64_t d_state() const { return a_log.dim(1); }
  void collect(const std::string& prefix, NamedParams& out);
};

SsmParams make_ssm(std::int64_t d_inner, int d_state, std::uint64_t seed);

struct MambaBlockParams {
  MambaBlockConfig cfg;
  Tensor ln_scale, ln_shift;  // [d_model]
  Tensor in_proj;             // [d_model, 2*d_inner]
  Tensor conv_w;              // [d_inner, dconv_width]
  Tensor conv_b;              // [d_inner]
  SsmParams ssm;
  Tensor out_proj;  // [d_inner, d_model]

  void collect(const std::string& prefix, NamedParams& out);
};

MambaBlockParams make_mamba_block(const MambaBlockConfig& cfg, std::uint64_t seed);

struct FusionMambaParams {
  SsmParams ssm_a, ssm_b;
  Tensor gate_a_w, gate_a_b;  // gates stream a from b: [d, d], [d]
  Tensor gate_b_w, gate_b_b;  // gates stream b from a
  Tensor out_w, out_b;        // [d, d], [d]

  void collect(const std::string& prefix, NamedParams& out);
};

FusionMambaParams make_fusion_mamba(std::int64_t d, int d_state, std::uint64_t seed);

/// (decay, input gain) for one token: decay[c, n] = exp(delta[c] * A[c, n]),
/// gain[c, n] = delta[c] * B[n]. Throws on non-positive delta.
std::pair<Tensor, Tensor> discretize(const Tensor& a, const Tensor& b_t, const Tensor& delta_t);

/// The recurrence with explicit per-token inputs. u, delta [L, C];
/// a [C, N]; b, c [L, N]; d [C]. State resets every `segment` tokens.
Tensor selective_scan_raw(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                          const Tensor& c, const Tensor& d, std::int64_t segment = 0);

/// Projects u [L, d_inner] to per-token B, C, delta and runs the recurrence.
Tensor selective_scan(const Tensor& u, const SsmParams& p, std::int64_t segment = 0);

/// tokens [L, d_model] -> [L, d_model] with internal residual.
Tensor mamba_block(const Tensor& tokens, const MambaBlockParams& p, std::int64_t segment = 0);

/// Cross-gated merge of two token streams [L, d].
Tensor fusion_mamba(const Tensor& a, const Tensor& b, const FusionMambaParams& p,
                    std::int64_t segment = 0);

enum class ScanStrategy { FourDir, Triplane, Planar2d };

std::string_view strategy_name(ScanStrategy s);
ScanStrategy parse_strategy(std::string_view s);

/// Direction blocks and in-block merges for one modality stream at one
/// latent stage.
struct DirectionalParams {
  ScanStrategy strategy = ScanStrategy::FourDir;
  bool reverse_planes = false;
  std::vector<MambaBlockParams> blocks;
  std::vector<FusionMambaParams> merges;

  void collect(const std::string& prefix, NamedParams& out);
};

DirectionalParams make_directional(ScanStrategy strategy, const MambaBlockConfig& cfg,
                                   bool reverse_planes, std::uint64_t seed);

/// x [B, C, H, W] (FourDir) or [B, C, D, H, W] (Triplane, Planar2d).
Tensor directional_forward(const Tensor& x, const DirectionalParams& p);

/// Token order and segment length used to merge two maps position-wise.
struct MergeLayout {
  ScanOrder order;
  std::int64_t segment;
};
MergeLayout merge_layout(ScanStrategy strategy, const Shape& spatial);

/// fusion_mamba applied to two feature maps [B, C, spatial...].
Tensor fuse_maps(const Tensor& f1, const Tensor& f2, const FusionMambaParams& p,
                 ScanStrategy strategy);

/// Single-map conveniences: fmap [C, H, W], vol [C, D, H, W].
Tensor vss_2d(const Tensor& fmap, const DirectionalParams& p);
Tensor triplane_3d(const Tensor& vol, const DirectionalParams& p);

}  // namespace fmamba
