#pragma once
// Binary PGM (P5) and PPM (P6) images, 8 or 16 bits per sample.

#include <string>

#include "fmamba/tensor.hpp"

namespace fmamba {

/// Grayscale -> [1, H, W], colour -> [3, H, W]; values scaled to [0, 1].
Tensor read_pnm(const std::string& path);

/// Writes [1, H, W] (or [H, W]) as P5 and [3, H, W] as P6. Values are
/// clamped to [0, 1] and quantized to `bits` (8 or 16).
void write_pnm(const std::string& path, const Tensor& img, int bits = 8);

}  // namespace fmamba
