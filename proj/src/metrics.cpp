#include "fmamba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "fmamba/losses.hpp"
#include "fmamba/ops.hpp"

namespace fmamba {
namespace {

void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

struct Kahan {
  Real sum = 0.0, comp = 0.0;
  void add(Real v) {
    const Real y = v - comp;
    const Real t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
};

// 2x average pooling over the trailing `dims` axes (floor on odd sizes).
Tensor avg_pool2(const Tensor& x, int dims) {
  Shape s = x.shape();
  const std::size_t r = s.size();
  const std::int64_t W = s[r - 1], H = s[r - 2], D = dims == 3 ? s[r - 3] : 1;
  const std::int64_t oW = W / 2, oH = H / 2, oD = dims == 3 ? D / 2 : 1;
  if (oW < 1 || oH < 1 || oD < 1) throw ShapeError("ms_ssim: image too small to downsample");
  const std::int64_t n = static_cast<std::int64_t>(x.numel()) / (D * H * W);
  Shape os = s;
  os[r - 1] = oW;
  os[r - 2] = oH;
  if (dims == 3) os[r - 3] = oD;
  std::vector<Real> out(static_cast<std::size_t>(n * oD * oH * oW));
  const auto in = x.data();
  const int kd = dims == 3 ? 2 : 1;
  const Real norm = 1.0 / (kd * 4);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t d = 0; d < oD; ++d)
      for (std::int64_t h = 0; h < oH; ++h)
        for (std::int64_t w = 0; w < oW; ++w) {
          Real acc = 0.0;
          for (int zd = 0; zd < kd; ++zd)
            for (int zh = 0; zh < 2; ++zh)
              for (int zw = 0; zw < 2; ++zw)
                acc += in[static_cast<std::size_t>(((b * D + d * kd + zd) * H + 2 * h + zh) * W + 2 * w + zw)];
          out[static_cast<std::size_t>(((b * oD + d) * oH + h) * oW + w)] = acc * norm;
        }
  return Tensor(os, std::move(out));
}

// Min-max normalized gradient magnitude, flattened.
std::vector<Real> feature_map(const Tensor& x, int dims) {
  const Tensor g = gradient_map(x.detach(), dims);
  std::vector<Real> v = g.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const Real mn = *lo, mx = *hi;
  for (auto& e : v) e = mx > mn ? (e - mn) / (mx - mn) : 0.0;
  return v;
}

int bin_of(Real v, int bins) {
  const Real c = std::min(std::max(v, 0.0), 1.0);
  return std::min(bins - 1, static_cast<int>(std::floor(c * bins)));
}

Real entropy_of_counts(const std::vector<std::int64_t>& counts, std::int64_t total) {
  Real h = 0.0;
  for (auto c : counts) {
    if (c == 0) continue;
    const Real p = static_cast<Real>(c) / static_cast<Real>(total);
    h -= p * std::log2(p);
  }
  return h;
}

Real nmi(const std::vector<Real>& a, const std::vector<Real>& b) {
  constexpr int kBins = 256;
  std::vector<std::int64_t> ha(kBins, 0), hb(kBins, 0), hab(static_cast<std::size_t>(kBins * kBins), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ia = bin_of(a[i], kBins), ib = bin_of(b[i], kBins);
    ++ha[static_cast<std::size_t>(ia)];
    ++hb[static_cast<std::size_t>(ib)];
    ++hab[static_cast<std::size_t>(ia * kBins + ib)];
  }
  const auto n = static_cast<std::int64_t>(a.size());
  const Real ea = entropy_of_counts(ha, n), eb = entropy_of_counts(hb, n), eab = entropy_of_counts(hab, n);
  if (ea + eb == 0.0) return a == b ? 1.0 : 0.0;
  const Real mi = (ea + eb) - eab;
  return 2.0 * mi / (ea + eb);
}

}  // namespace

Real psnr(const Tensor& x, const Tensor& y, Real peak) {
  check_same(x, y, "psnr");
  Real acc = 0.0;
  const auto a = x.data(), b = y.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  const Real mse = acc / static_cast<Real>(a.size());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

std::int64_t ms_ssim_min_size(int scales) { return (std::int64_t{1} << (scales - 1)) * kSsimWindow; }

Real ms_ssim(const Tensor& x, const Tensor& y, int dims, const MsSsimOptions& opt) {
  check_same(x, y, "ms_ssim");
  if (opt.scales < 1 || opt.scales > 5) throw ValidationError("ms_ssim scales must be in 1..5");
  std::int64_t min_dim = x.dim(-1);
  for (int i = 2; i <= dims; ++i) min_dim = std::min(min_dim, x.dim(-i));
  int scales = opt.scales;
  if (min_dim < ms_ssim_min_size(scales)) {
    if (!opt.auto_reduce) {
      throw ShapeError("ms_ssim with " + std::to_string(scales) + " scales needs spatial dims >= " +
                       std::to_string(ms_ssim_min_size(scales)) + ", got " + shape_str(x.shape()) +
                       " (enable automatic scale reduction)");
    }
    while (scales > 1 && min_dim < ms_ssim_min_size(scales)) --scales;
    if (min_dim < ms_ssim_min_size(1)) throw ShapeError("ms_ssim: image smaller than the SSIM window");
  }
  Real wsum = 0.0;
  for (int j = 0; j < scales; ++j) wsum += kMsSsimWeights[j];
  Tensor a = x.detach(), b = y.detach();
  Real result = 1.0;
  for (int j = 0; j < scales; ++j) {
    const Real w = kMsSsimWeights[j] / wsum;
    const SsimParts parts = ssim_parts(a, b, dims);
    const Real term = j + 1 == scales ? parts.ssim.item() : parts.cs.item();
    result *= std::pow(std::max(term, 0.0), w);
    if (j + 1 < scales) {
      a = avg_pool2(a, dims);
      b = avg_pool2(b, dims);
    }
  }
  return result;
}

Real entropy(const Tensor& x, int bins) {
  if (bins < 2) throw ValidationError("entropy needs at least 2 bins");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  for (Real v : x.data()) ++counts[static_cast<std::size_t>(bin_of(v, bins))];
  return entropy_of_counts(counts, static_cast<std::int64_t>(x.numel()));
}

Real fmi(const Tensor& x, const Tensor& y, const Tensor& fused, int dims) {
  check_same(x, fused, "fmi");
  check_same(y, fused, "fmi");
  const auto ff = feature_map(fused, dims);
  return 0.5 * (nmi(ff, feature_map(x, dims)) + nmi(ff, feature_map(y, dims)));
}

std::vector<std::string> metric_names(int dims) {
  if (dims == 2) return {"psnr", "ssim", "fmi", "fsim", "en"};
  if (dims == 3) return {"psnr", "ms_ssim", "en"};
  throw ValidationError("dims must be 2 or 3");
}

MetricRow evaluate_pair(const std::string& id, const Tensor& x1, const Tensor& x2, const Tensor& fused, int dims) {
  check_same(x1, fused, "evaluate_pair");
  check_same(x2, fused, "evaluate_pair");
  MetricRow row{id, {}};
  const Real p = 0.5 * (psnr(fused, x1) + psnr(fused, x2));
  if (dims == 2) {
    row.values = {p,
                  0.5 * (ssim(fused, x1, 2).item() + ssim(fused, x2, 2).item()),
                  fmi(x1, x2, fused, 2),
                  0.5 * (fsim(fused, x1) + fsim(fused, x2)),
                  entropy(fused)};
  } else {
    const MsSsimOptions opt{5, true};
    row.values = {p, 0.5 * (ms_ssim(fused, x1, 3, opt) + ms_ssim(fused, x2, 3, opt)), entropy(fused)};
  }
  return row;
}

std::vector<MetricSummary> aggregate(const std::vector<MetricRow>& rows, std::size_t n_metrics) {
  std::vector<MetricSummary> out(n_metrics);
  for (std::size_t m = 0; m < n_metrics; ++m) {
    Kahan s;
    for (const auto& r : rows) {
      if (std::isfinite(r.values.at(m))) {
        s.add(r.values[m]);
        ++out[m].count;
      } else {
        ++out[m].excluded;
      }
    }
    if (out[m].count == 0) {
      out[m].mean = std::numeric_limits<Real>::quiet_NaN();
      continue;
    }
    out[m].mean = s.sum / static_cast<Real>(out[m].count);
    Kahan v;
    for (const auto& r : rows) {
      if (std::isfinite(r.values[m])) v.add((r.values[m] - out[m].mean) * (r.values[m] - out[m].mean));
    }
    out[m].stddev = std::sqrt(v.sum / static_cast<Real>(out[m].count));
  }
  return out;
}

std::string format_metric(Real v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_report(std::ostream& os, const std::vector<MetricRow>& rows, int dims) {
  const auto names = metric_names(dims);
  os << "pair_id";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (const auto& r : rows) {
    os << r.id;
    for (Real v : r.values) os << ',' << format_metric(v);
    os << '\n';
  }
  const auto agg = aggregate(rows, names.size());
  os << "#mean";
  for (const auto& a : agg) os << ',' << format_metric(a.mean);
  os << "\n#std";
  for (const auto& a : agg) os << ',' << format_metric(a.stddev);
  os << '\n';
}

std::vector<MetricRow> read_report(std::istream& is, int& dims) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty metric report");
  if (line == "pair_id,psnr,ssim,fmi,fsim,en") {
    dims = 2;
  } else if (line == "pair_id,psnr,ms_ssim,en") {
    dims = 3;
  } else {
    throw IoError("unrecognized metric report header: " + line);
  }
  const std::size_t n = metric_names(dims).size();
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    MetricRow r;
    std::getline(ss, r.id, ',');
    std::string cell;
    while (std::getline(ss, cell, ',')) r.values.push_back(std::strtod(cell.c_str(), nullptr));
    if (r.values.size() != n) throw IoError("metric report row has wrong column count: " + line);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace fmamba
