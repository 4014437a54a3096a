#pragma once
// Differentiable tensor primitives. Every function records itself on the
// active GradTape when one of its inputs is tracked.

#include <cstdint>
#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba::ops {

enum class ElementwiseOp { Add, Sub, Mul, Div, Max, LeakyRelu, Sigmoid, Silu, Exp, Abs };
enum class ReduceOp { Sum, Mean, Max, L1Norm, L2Norm };

inline constexpr Real kLeakySlope = 0.2;

/// Checked mode: every op output is scanned for NaN/Inf and a
/// NumericalError is raised at the first offender. Off by default.
void set_check_finite(bool on);
bool check_finite_enabled();

/// Broadcast result shape (numpy rules, right-aligned); throws ShapeError.
Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor* b = nullptr,
                   Real alpha = kLeakySlope);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
// Gradient routes to the larger operand; ties go to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, Real s);
Tensor mul_scalar(const Tensor& a, Real s);
Tensor neg(const Tensor& a);

Tensor leaky_relu(const Tensor& a, Real slope = kLeakySlope);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor softplus(const Tensor& a);
// Subgradient 0 at exactly zero.
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

/// Empty `axes` reduces everything to shape [1].
Tensor reduce(ReduceOp op, const Tensor& a, std::vector<std::int64_t> axes = {},
              bool keepdim = false);
Tensor sum(const Tensor& a, std::vector<std::int64_t> axes = {}, bool keepdim = false);
Tensor mean(const Tensor& a, std::vector<std::int64_t> axes = {}, bool keepdim = false);
Tensor max(const Tensor& a, std::vector<std::int64_t> axes = {}, bool keepdim = false);
Tensor l1_norm(const Tensor& a);
Tensor l2_norm(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);

/// grid [B, C, S] -> tokens [B*L, C] with tokens[b*L + l, c] = grid[b, c, order[l]].
Tensor gather_tokens(const Tensor& grid, const std::vector<std::int64_t>& order);
/// Inverse of gather_tokens for a bijective `order`: tokens [B*S, C] -> grid [B, C, S].
Tensor scatter_tokens(const Tensor& tokens, const std::vector<std::int64_t>& order,
                      std::int64_t batch);

/// Correlation with a constant 1D kernel along `axis`, valid positions only.
Tensor filter1d_valid(const Tensor& x, const std::vector<Real>& kernel, std::int64_t axis);

/// Nearest-neighbour upsampling of every axis from index 2 on.
Tensor upsample_nearest(const Tensor& x, std::int64_t factor);

}  // namespace fmamba::ops
