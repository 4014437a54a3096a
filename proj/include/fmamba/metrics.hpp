#pragma once
// Fusion quality metrics and per-pair / aggregate reporting.

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba {

/// Returned by psnr when the images are identical.
inline constexpr Real kPsnrIdentical = std::numeric_limits<Real>::infinity();

Real psnr(const Tensor& x, const Tensor& y, Real peak = 1.0);

inline constexpr Real kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsimOptions {
  int scales = 5;
  /// Drop coarse scales (renormalizing weights) instead of failing on small inputs.
  bool auto_reduce = false;
};

/// Smallest spatial extent accepted for the given scale count.
std::int64_t ms_ssim_min_size(int scales);
Real ms_ssim(const Tensor& x, const Tensor& y, int dims, const MsSsimOptions& opt = {});

/// Shannon entropy (bits) of the intensity histogram of values in [0, 1].
Real entropy(const Tensor& x, int bins = 256);

/// Normalized mutual information between gradient-magnitude features of
/// the fused image and each source, averaged.
Real fmi(const Tensor& x, const Tensor& y, const Tensor& fused, int dims = 2);

/// Feature similarity (phase congruency + gradient magnitude). 2D only;
/// accepts [H, W] or any shape whose leading dims are all 1.
Real fsim(const Tensor& x, const Tensor& y);

/// Phase congruency map of a 2D image with values on a 0..255 scale.
std::vector<Real> phase_congruency(const std::vector<Real>& img, std::int64_t rows, std::int64_t cols);

std::vector<std::string> metric_names(int dims);

struct MetricRow {
  std::string id;
  std::vector<Real> values;  // aligned with metric_names(dims)
};

MetricRow evaluate_pair(const std::string& id, const Tensor& x1, const Tensor& x2, const Tensor& fused,
                        int dims);

struct MetricSummary {
  Real mean = 0.0;
  Real stddev = 0.0;  // population
  std::size_t count = 0;
  std::size_t excluded = 0;  // non-finite sentinels left out
};

/// Per-metric summaries; non-finite values are excluded.
std::vector<MetricSummary> aggregate(const std::vector<MetricRow>& rows, std::size_t n_metrics);

/// CSV with header, one row per pair, then "#mean" and "#std" footer rows.
void write_report(std::ostream& os, const std::vector<MetricRow>& rows, int dims);
/// Reads the pair rows back (footer lines are skipped).
std::vector<MetricRow> read_report(std::istream& is, int& dims);

std::string format_metric(Real v);

}  // namespace fmamba
