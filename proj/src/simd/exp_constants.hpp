#pragma once

#include <array>

namespace fmamba::simd::exp_detail {

// Clamp keeps 2^k inside the normal exponent range.
inline constexpr double kExpMin = -708.0;
inline constexpr double kExpMax = 709.0;
inline constexpr double kLog2e = 1.4426950408889634074;
// ln2 split: the high part has trailing zero bits so k * kLn2Hi is exact.
inline constexpr double kLn2Hi = 6.93147180369123816490e-01;
inline constexpr double kLn2Lo = 1.90821492927058770002e-10;
// 2^52 + 1023: adding this to an integral double leaves the biased
// exponent in the low mantissa bits.
inline constexpr double kExpMagic = 4503599627371519.0;

// Taylor coefficients 1/j! for j = 13..0, Horner order. |r| <= ln2/2 gives
// a truncation error below 1e-17 relative.
inline constexpr std::array<double, 14> kExpCoeffs = {
    1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
    1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
    1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        0.5,
    1.0,                1.0,
};

}  // namespace fmamba::simd::exp_detail
