#include "fmamba/scan_order.hpp"

#include <algorithm>

#include "fmamba/ops.hpp"

namespace fmamba {

std::string_view direction_name(ScanDirection d) {
  switch (d) {
    case ScanDirection::LR: return "LR";
    case ScanDirection::RL: return "RL";
    case ScanDirection::TB: return "TB";
    case ScanDirection::BT: return "BT";
  }
  return "?";
}

std::string_view plane_name(Plane p) {
  switch (p) {
    case Plane::Axial: return "axial";
    case Plane::Coronal: return "coronal";
    case Plane::Sagittal: return "sagittal";
  }
  return "?";
}

ScanOrder scan_order_2d(std::int64_t H, std::int64_t W, ScanDirection dir) {
  if (H < 1 || W < 1) throw ShapeError("scan grid dims must be >= 1");
  ScanOrder order;
  order.reserve(static_cast<std::size_t>(H * W));
  if (dir == ScanDirection::LR || dir == ScanDirection::RL) {
    for (std::int64_t h = 0; h < H; ++h)
      for (std::int64_t w = 0; w < W; ++w) order.push_back(h * W + w);
  } else {
    for (std::int64_t w = 0; w < W; ++w)
      for (std::int64_t h = 0; h < H; ++h) order.push_back(h * W + w);
  }
  if (dir == ScanDirection::RL || dir == ScanDirection::BT) std::reverse(order.begin(), order.end());
  return order;
}

ScanOrder scan_order_3d(std::int64_t D, std::int64_t H, std::int64_t W, Plane plane, bool reverse) {
  if (D < 1 || H < 1 || W < 1) throw ShapeError("scan volume dims must be >= 1");
  ScanOrder order;
  order.reserve(static_cast<std::size_t>(D * H * W));
  auto at = [&](std::int64_t d, std::int64_t h, std::int64_t w) { return (d * H + h) * W + w; };
  switch (plane) {
    case Plane::Axial:
      for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
          for (std::int64_t w = 0; w < W; ++w) order.push_back(at(d, h, w));
      break;
    case Plane::Coronal:
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t d = 0; d < D; ++d)
          for (std::int64_t w = 0; w < W; ++w) order.push_back(at(d, h, w));
      break;
    case Plane::Sagittal:
      for (std::int64_t w = 0; w < W; ++w)
        for (std::int64_t d = 0; d < D; ++d)
          for (std::int64_t h = 0; h < H; ++h) order.push_back(at(d, h, w));
      break;
  }
  if (reverse) std::reverse(order.begin(), order.end());
  return order;
}

ScanOrder planar_order(std::int64_t D, std::int64_t H, std::int64_t W, ScanDirection dir) {
  const ScanOrder slice = scan_order_2d(H, W, dir);
  ScanOrder order;
  order.reserve(static_cast<std::size_t>(D * H * W));
  for (std::int64_t d = 0; d < D; ++d)
    for (auto p : slice) order.push_back(d * H * W + p);
  return order;
}

Tensor scan_2d(const Tensor& fmap, ScanDirection dir) {
  if (fmap.rank() != 3) throw ShapeError("scan_2d expects [C, H, W]");
  const std::int64_t C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2);
  return ops::gather_tokens(ops::reshape(fmap, {1, C, H * W}), scan_order_2d(H, W, dir));
}

Tensor unscan_2d(const Tensor& tokens, ScanDirection dir, std::int64_t H, std::int64_t W) {
  const std::int64_t C = tokens.dim(1);
  return ops::reshape(ops::scatter_tokens(tokens, scan_order_2d(H, W, dir), 1), {C, H, W});
}

Tensor scan_3d(const Tensor& vol, Plane plane) {
  if (vol.rank() != 4) throw ShapeError("scan_3d expects [C, D, H, W]");
  const std::int64_t C = vol.dim(0), D = vol.dim(1), H = vol.dim(2), W = vol.dim(3);
  return ops::gather_tokens(ops::reshape(vol, {1, C, D * H * W}), scan_order_3d(D, H, W, plane));
}

Tensor unscan_3d(const Tensor& tokens, Plane plane, std::int64_t D, std::int64_t H, std::int64_t W) {
  const std::int64_t C = tokens.dim(1);
  return ops::reshape(ops::scatter_tokens(tokens, scan_order_3d(D, H, W, plane), 1), {C, D, H, W});
}

}  // namespace fmamba
