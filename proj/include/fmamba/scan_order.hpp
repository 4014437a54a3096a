#pragma once
// Grid <-> token-sequence flattenings. An order lists, for each sequence
// position, the row-major flat index of the grid cell it visits.

#include <cstdint>
#include <string_view>
#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba {

enum class ScanDirection { LR, RL, TB, BT };
enum class Plane { Axial, Coronal, Sagittal };

using ScanOrder = std::vector<std::int64_t>;

std::string_view direction_name(ScanDirection d);
std::string_view plane_name(Plane p);

/// LR: (h, w) lexicographic; TB: (w, h) lexicographic; RL/BT reversed.
ScanOrder scan_order_2d(std::int64_t H, std::int64_t W, ScanDirection dir);

/// Axial (d, h, w), Coronal (h, d, w), Sagittal (w, d, h) lexicographic.
ScanOrder scan_order_3d(std::int64_t D, std::int64_t H, std::int64_t W, Plane plane,
                        bool reverse = false);

/// In-slice orders for the planar ablation: LR visits (d, h, w), TB visits
/// (d, w, h); each depth slice forms its own contiguous run of H*W tokens.
ScanOrder planar_order(std::int64_t D, std::int64_t H, std::int64_t W, ScanDirection dir);

/// fmap [C, H, W] -> tokens [H*W, C]
Tensor scan_2d(const Tensor& fmap, ScanDirection dir);
/// tokens [H*W, C] -> fmap [C, H, W]
Tensor unscan_2d(const Tensor& tokens, ScanDirection dir, std::int64_t H, std::int64_t W);

/// vol [C, D, H, W] -> tokens [D*H*W, C]
Tensor scan_3d(const Tensor& vol, Plane plane);
/// tokens [D*H*W, C] -> vol [C, D, H, W]
Tensor unscan_3d(const Tensor& tokens, Plane plane, std::int64_t D, std::int64_t H, std::int64_t W);

}  // namespace fmamba
