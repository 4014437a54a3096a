#pragma once
// Convolution, pooling, projection and normalization primitives.

#include <cstdint>

#include "fmamba/tensor.hpp"

namespace fmamba::nn {

/// weight [out, in, k...] with 2 or 3 spatial kernel dims; bias [out].
struct ConvParams {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  int spatial_rank() const { return static_cast<int>(weight.rank()) - 2; }
  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t in_channels() const { return weight.dim(1); }
  std::int64_t kernel() const { return weight.dim(2); }
};

/// He-style uniform init scaled by `gain`; padding defaults to "same"
/// (dilation * (k - 1) / 2).
ConvParams make_conv(int spatial_rank, std::int64_t in_ch, std::int64_t out_ch, int kernel,
                     std::uint64_t seed, int stride = 1, int dilation = 1, Real gain = 1.0);

/// Output length along one axis for the given conv geometry.
std::int64_t conv_out_size(std::int64_t in, int kernel, int stride, int padding, int dilation);

/// Cross-correlation with zero padding. x is [B, C, H, W] or [B, C, D, H, W].
Tensor conv(const Tensor& x, const ConvParams& p);

enum class PoolMode { Avg, Max };

/// [B, C, spatial...] -> [B, C]
Tensor global_pool(const Tensor& x, PoolMode mode);

/// Affine map on the last axis. `b` may be undefined (no bias).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

inline constexpr Real kLayerNormEps = 1e-5;

/// Normalizes over the last axis, then applies scale and shift ([d] each).
Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift,
                  Real eps = kLayerNormEps);

/// Causal depthwise conv over tokens. x [L, C], weight [C, K], bias [C].
/// Output t sees inputs t-K+1..t; history restarts every `segment` tokens
/// (0 = one sequence).
Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
                     std::int64_t segment = 0);

}  // namespace fmamba::nn
