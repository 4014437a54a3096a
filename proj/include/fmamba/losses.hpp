#pragma once
// Training objective. All norms are mean-reduced so the weights are
// independent of image size.

#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba {

struct LossWeights {
  Real pixel = 2.0;
  Real grad = 10.0;
  Real ssim = 5.0;

  void validate() const;
};

inline constexpr Real kGradEps = 1e-8;
inline constexpr int kSsimWindow = 11;
inline constexpr Real kSsimSigma = 1.5;
inline constexpr Real kSsimC1 = 0.01 * 0.01;
inline constexpr Real kSsimC2 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps.
std::vector<Real> gaussian_window(int size = kSsimWindow, Real sigma = kSsimSigma);

/// mean |xhat - max(x1, x2)|
Tensor pixel_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2);

/// Gradient magnitude over the trailing `dims` axes. 2D: Sobel with
/// replicated borders; 3D: forward differences, zero at the far border.
/// sqrt(sum of squares + kGradEps).
Tensor gradient_map(const Tensor& x, int dims);

/// RMS of gradient_map(xhat) - max(gradient_map(x1), gradient_map(x2)).
Tensor grad_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2, int dims);

/// Mean SSIM over valid window positions (Gaussian 11, sigma 1.5).
Tensor ssim(const Tensor& x, const Tensor& y, int dims);

/// Mean SSIM and mean contrast-structure term, for multi-scale SSIM.
struct SsimParts {
  Tensor ssim;
  Tensor cs;
};
SsimParts ssim_parts(const Tensor& x, const Tensor& y, int dims);

Tensor ssim_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2, int dims);

struct LossBreakdown {
  Tensor total;
  Real pixel = 0.0;
  Real grad = 0.0;
  Real ssim = 0.0;
};

LossBreakdown total_loss(const Tensor& xhat, const Tensor& x1, const Tensor& x2, const LossWeights& w,
                         int dims);

}  // namespace fmamba
