#pragma once
// Two-encoder fusion network with a latent state-space fusion stack and a
// channel-attention decoder, for 2D images and 3D volumes.

#include <cstdint>
#include <string>
#include <vector>

#include "fmamba/mamba.hpp"
#include "fmamba/nn.hpp"
#include "fmamba/params.hpp"

namespace fmamba {

struct ModelConfig {
  int dims = 2;
  std::int64_t in_channels = 1;
  std::int64_t stem_channels = 32;
  std::int64_t latent_channels = 64;
  int dgcb_blocks = 2;
  std::vector<int> dgcb_dilations{1, 3, 5};
  int k_mamba = 5;
  bool cmca_enabled = true;
  ScanStrategy scan_strategy = ScanStrategy::FourDir;
  int downsample_3d = 4;
  int decoder_layers = 3;
  int decoder_min_channels = 16;
  int cmca_reduction = 4;
  int mamba_expand = 2;
  int mamba_d_state = 16;
  int mamba_dconv = 4;
  bool triplane_reverse = false;
  std::uint64_t init_seed = 1;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  MambaBlockConfig mamba_config() const;
  /// Total spatial reduction between image and latent grid.
  int reduction() const { return dims == 3 ? downsample_3d : 1; }
};

struct DgcbParams {
  nn::ConvParams gate3, gate1;
  std::vector<nn::ConvParams> branches;
  nn::ConvParams merge;

  void collect(const std::string& prefix, NamedParams& out);
};

struct EncoderParams {
  nn::ConvParams stem, expand;
  std::vector<nn::ConvParams> down;
  std::vector<DgcbParams> dgcbs;

  void collect(const std::string& prefix, NamedParams& out);
};

struct CmcaParams {
  Tensor w1;  // [C, C/r]
  Tensor w2;  // [C/r, C]

  void collect(const std::string& prefix, NamedParams& out);
};

struct LatentStage {
  DirectionalParams stream[2];
  FusionMambaParams merge;

  void collect(const std::string& prefix, NamedParams& out);
};

struct DecoderParams {
  CmcaParams cmca[2];  // left undefined when cross-modal attention is off
  std::vector<nn::ConvParams> layers;
  std::vector<nn::ConvParams> up;
  nn::ConvParams out;

  void collect(const std::string& prefix, NamedParams& out);
};

struct FusionModel {
  ModelConfig cfg;
  EncoderParams enc[2];
  std::vector<LatentStage> stages;
  DecoderParams dec;

  /// Stable, name-sorted-by-construction parameter list.
  NamedParams named_parameters();
  std::int64_t param_count();
};

/// Builds and initializes a model; deterministic in cfg.init_seed.
FusionModel build_model(const ModelConfig& cfg);

/// Swaps every per-modality parameter group so that
/// forward(swapped, x2, x1) == forward(model, x1, x2).
FusionModel swap_modalities(const FusionModel& model);

DgcbParams make_dgcb(int spatial_rank, std::int64_t channels, const std::vector<int>& dilations,
                     std::uint64_t seed);
Tensor dgcb_forward(const Tensor& x, const DgcbParams& p);

Tensor encode(const Tensor& x, int modality, const FusionModel& m);

struct LatentResult {
  Tensor fused, f1, f2;
};
LatentResult latent_fuse(const Tensor& f1, const Tensor& f2, const FusionModel& m);

CmcaParams make_cmca(std::int64_t channels, int reduction, std::uint64_t seed);
/// Reweights `query` channels by pooled descriptors of `ref`.
Tensor cmca(const Tensor& ref, const Tensor& query, const CmcaParams& p);

Tensor decode(const LatentResult& lat, const FusionModel& m);

/// x1, x2 [B, 1, spatial...] in [0, 1] -> fused [B, 1, spatial...].
Tensor forward_fuse(const Tensor& x1, const Tensor& x2, const FusionModel& m);

}  // namespace fmamba
