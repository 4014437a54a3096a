#include "fmamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fmamba/image_io.hpp"
#include "fmamba/ops.hpp"
#include "fmamba/tensor_io.hpp"

namespace fmamba {
namespace {

void check_planes(const Tensor& t, const Shape& like, const char* what) {
  if (t.shape() != like) {
    throw ShapeError(std::string(what) + ": expected " + shape_str(like) + ", got " + shape_str(t.shape()));
  }
}

// Linear resampling of one axis with corner alignment.
Tensor resample_axis(const Tensor& x, std::size_t axis, std::int64_t out_n) {
  const Shape& s = x.shape();
  const std::int64_t n = s[axis];
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape os = s;
  os[axis] = out_n;
  std::vector<Real> out(static_cast<std::size_t>(outer * out_n * inner));
  const auto in = x.data();
  for (std::int64_t j = 0; j < out_n; ++j) {
    const Real pos = out_n == 1 || n == 1 ? 0.0 : static_cast<Real>(j) * static_cast<Real>(n - 1) / static_cast<Real>(out_n - 1);
    const auto i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(pos)), n - 1);
    const std::int64_t i1 = std::min(i0 + 1, n - 1);
    const Real t = pos - static_cast<Real>(i0);
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < inner; ++k) {
        const Real v0 = in[static_cast<std::size_t>((o * n + i0) * inner + k)];
        const Real v1 = in[static_cast<std::size_t>((o * n + i1) * inner + k)];
        out[static_cast<std::size_t>((o * out_n + j) * inner + k)] = t == 0.0 ? v0 : v0 + t * (v1 - v0);
      }
  }
  return Tensor(os, std::move(out));
}

Real smooth_inside(Real d, Real width) { return 1.0 / (1.0 + std::exp((d - 1.0) / width)); }

struct Blob {
  Real c[3];
  Real r[3];
  Real a_value, b_value;
  int kind;  // 0: both modalities, 1: b only, 2: a only
};

Real uniform_in(Rng& rng, Real lo, Real hi) { return lo + (hi - lo) * rng.uniform(); }

bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return tail == suffix;
}

}  // namespace

YCbCr rgb_to_ycbcr(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw ShapeError("rgb_to_ycbcr expects [3, H, W], got " + shape_str(rgb.shape()));
  const std::int64_t H = rgb.dim(1), W = rgb.dim(2);
  const auto n = static_cast<std::size_t>(H * W);
  const auto d = rgb.data();
  std::vector<Real> y(n), cb(n), cr(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real r = d[i], g = d[n + i], b = d[2 * n + i];
    y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    cb[i] = 0.5 + (b - y[i]) / 1.772;
    cr[i] = 0.5 + (r - y[i]) / 1.402;
  }
  return {Tensor({1, H, W}, std::move(y)), Tensor({1, H, W}, std::move(cb)), Tensor({1, H, W}, std::move(cr))};
}

Tensor ycbcr_to_rgb(const Tensor& y, const Tensor& cb, const Tensor& cr) {
  if (y.rank() != 3 || y.dim(0) != 1) throw ShapeError("ycbcr_to_rgb expects [1, H, W] planes, got " + shape_str(y.shape()));
  check_planes(cb, y.shape(), "ycbcr_to_rgb cb");
  check_planes(cr, y.shape(), "ycbcr_to_rgb cr");
  const std::int64_t H = y.dim(1), W = y.dim(2);
  const auto n = static_cast<std::size_t>(H * W);
  const auto Y = y.data(), Cb = cb.data(), Cr = cr.data();
  std::vector<Real> out(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real r = Y[i] + 1.402 * (Cr[i] - 0.5);
    const Real b = Y[i] + 1.772 * (Cb[i] - 0.5);
    const Real g = (Y[i] - 0.299 * r - 0.114 * b) / 0.587;
    out[i] = std::clamp(r, 0.0, 1.0);
    out[n + i] = std::clamp(g, 0.0, 1.0);
    out[2 * n + i] = std::clamp(b, 0.0, 1.0);
  }
  return Tensor({3, H, W}, std::move(out));
}

Tensor normalize01(const Tensor& x) {
  const auto d = x.data();
  if (d.empty()) return x.clone();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const Real mn = *lo, mx = *hi;
  std::vector<Real> out(d.size(), 0.0);
  if (mx > mn) {
    const Real range = mx - mn;
    for (std::size_t i = 0; i < d.size(); ++i) out[i] = (d[i] - mn) / range;
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor apply_roi_mask(const Tensor& x, const Tensor& mask) {
  if (x.shape() != mask.shape()) {
    throw ShapeError("apply_roi_mask: mask " + shape_str(mask.shape()) + " does not match image " + shape_str(x.shape()));
  }
  if (ops::check_finite_enabled()) {
    const auto m = mask.data();
    if (std::any_of(m.begin(), m.end(), [](Real v) { return v != 0.0 && v != 1.0; })) {
      std::cerr << "warning: ROI mask is not binary\n";
    }
  }
  std::vector<Real> out(x.numel());
  const auto a = x.data(), m = mask.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * m[i];
  return Tensor(x.shape(), std::move(out));
}

Tensor crop_resample_volume(const Tensor& v, const CropResampleOptions& opt) {
  if (v.rank() != 4 || v.dim(0) != 1) throw ShapeError("crop_resample_volume expects [1, D, H, W], got " + shape_str(v.shape()));
  if (opt.target.size() != 3) throw ValidationError("crop_resample_volume target must have 3 extents");
  for (auto t : opt.target)
    if (t < 1) throw ValidationError("crop_resample_volume target extents must be positive");
  const std::int64_t H = v.dim(2), W = v.dim(3);
  if (opt.crop_hw < 1 || H < opt.crop_hw || W < opt.crop_hw) {
    throw ShapeError("crop_resample_volume: volume " + shape_str(v.shape()) + " smaller than crop " +
                     std::to_string(opt.crop_hw));
  }
  const std::int64_t oh = (H - opt.crop_hw) / 2, ow = (W - opt.crop_hw) / 2;
  Tensor cropped = ops::slice(ops::slice(v.detach(), 2, oh, opt.crop_hw), 3, ow, opt.crop_hw);
  Tensor out = resample_axis(cropped, 1, opt.target[0]);
  out = resample_axis(out, 2, opt.target[1]);
  return resample_axis(out, 3, opt.target[2]);
}

std::vector<Tensor> axial_slices(const Tensor& v, Real min_nonzero) {
  if (v.rank() != 4 || v.dim(0) != 1) throw ShapeError("axial_slices expects [1, D, H, W], got " + shape_str(v.shape()));
  const std::int64_t D = v.dim(1), H = v.dim(2), W = v.dim(3);
  const auto plane = static_cast<std::size_t>(H * W);
  const auto d = v.data();
  std::vector<Tensor> out;
  for (std::int64_t z = 0; z < D; ++z) {
    const auto begin = d.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(z) * plane);
    const auto end = begin + static_cast<std::ptrdiff_t>(plane);
    const auto nonzero = std::count_if(begin, end, [](Real e) { return e > 0.0; });
    if (static_cast<Real>(nonzero) >= min_nonzero * static_cast<Real>(plane)) {
      out.emplace_back(Shape{1, H, W}, std::vector<Real>(begin, end));
    }
  }
  return out;
}

ImagePair synth_pair(std::uint64_t seed, int dims, std::int64_t size, const SynthOptions& opt) {
  if (dims != 2 && dims != 3) throw ValidationError("synth dims must be 2 or 3");
  if (size < 4) throw ValidationError("synth size must be at least 4");
  if (opt.min_blobs < 0 || opt.max_blobs < opt.min_blobs) throw ValidationError("synth blob range is invalid");
  Rng rng(derive_seed(seed, 0x5e7));
  const int nd = dims;

  Real head_c[3] = {0, 0, 0}, head_r[3] = {1, 1, 1};
  for (int k = 0; k < nd; ++k) {
    head_c[k] = uniform_in(rng, -0.05, 0.05);
    head_r[k] = uniform_in(rng, 0.72, 0.88);
  }
  const Real shell = uniform_in(rng, 0.84, 0.9);
  // Shared boundaries step the same way in both modalities; the modalities
  // differ in tissue levels and in lesions that only one of them shows.
  // volumes need a darker second-modality brain to stay decorrelated
  const Real bb0 = dims == 3 ? 0.1 : 0.25, bb1 = bb0 + 0.1;
  const Real a_brain = uniform_in(rng, 0.35, 0.45), b_brain = uniform_in(rng, bb0, bb1);
  const Real a_skull = uniform_in(rng, 0.6, 0.75), b_skull = uniform_in(rng, 0.85, 0.95);

  const int n_blobs = opt.min_blobs + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_blobs - opt.min_blobs + 1)));
  std::vector<Blob> blobs(static_cast<std::size_t>(n_blobs));
  for (int i = 0; i < n_blobs; ++i) {
    Blob& bl = blobs[static_cast<std::size_t>(i)];
    for (int k = 0; k < 3; ++k) {
      bl.c[k] = k < nd ? head_c[k] + uniform_in(rng, -0.45, 0.45) * head_r[k] : 0.0;
      bl.r[k] = k < nd ? uniform_in(rng, 0.08, 0.28) : 1.0;
    }
    bl.kind = i % 3;
    const Real u = uniform_in(rng, 0.6, 0.95), v = uniform_in(rng, 0.55, 1.0);
    bl.a_value = bl.kind == 1 ? a_brain : u;
    bl.b_value = bl.kind == 2 ? b_brain : v;
  }
  Real fa[3], fb[3], pa[3], pb[3];
  for (int k = 0; k < 3; ++k) {
    fa[k] = uniform_in(rng, 2.0, 4.0) * M_PI;
    fb[k] = uniform_in(rng, 3.0, 6.0) * M_PI;
    pa[k] = uniform_in(rng, 0.0, 2.0 * M_PI);
    pb[k] = uniform_in(rng, 0.0, 2.0 * M_PI);
  }

  // smooth per-modality bias field
  Real ga[3] = {0, 0, 0}, gb[3] = {0, 0, 0};
  const Real gain = 0.2;
  for (int k = 0; k < nd; ++k) {
    ga[k] = gain * uniform_in(rng, -1.0, 1.0);
    gb[k] = gain * uniform_in(rng, -1.0, 1.0);
  }
  const std::int64_t D = dims == 3 ? size : 1;
  const std::int64_t n = D * size * size;
  std::vector<Real> va(static_cast<std::size_t>(n)), vb(static_cast<std::size_t>(n));
  const Real edge = 2.0 / static_cast<Real>(size);
  for (std::int64_t z = 0; z < D; ++z)
    for (std::int64_t y = 0; y < size; ++y)
      for (std::int64_t x = 0; x < size; ++x) {
        Real p[3] = {0.0, 0.0, 0.0};
        const std::int64_t idx[3] = {x, y, z};
        for (int k = 0; k < nd; ++k) p[k] = (static_cast<Real>(idx[k]) + 0.5) * edge - 1.0;
        Real dh = 0.0;
        for (int k = 0; k < nd; ++k) dh += ((p[k] - head_c[k]) / head_r[k]) * ((p[k] - head_c[k]) / head_r[k]);
        dh = std::sqrt(dh);
        const Real in_head = smooth_inside(dh, edge);
        const Real in_brain = smooth_inside(dh / shell, edge);
        Real a = a_skull + (a_brain - a_skull) * in_brain;
        Real b = b_skull + (b_brain - b_skull) * in_brain;
        for (const Blob& bl : blobs) {
          Real db = 0.0;
          for (int k = 0; k < nd; ++k) db += ((p[k] - bl.c[k]) / bl.r[k]) * ((p[k] - bl.c[k]) / bl.r[k]);
          const Real w = smooth_inside(std::sqrt(db), 3.0 * edge) * in_brain;
          a += (bl.a_value - a) * w;
          b += (bl.b_value - b) * w;
        }
        Real ta = 1.0, tb = 1.0;
        for (int k = 0; k < nd; ++k) {
          ta *= std::sin(fa[k] * p[k] + pa[k]);
          tb *= std::sin(fb[k] * p[k] + pb[k]);
        }
        a += opt.texture_amplitude * ta * in_brain;
        b += opt.texture_amplitude * tb * in_brain;
        Real bias_a = 1.0, bias_b = 1.0;
        for (int k = 0; k < nd; ++k) {
          bias_a += ga[k] * p[k];
          bias_b += gb[k] * p[k];
        }
        a *= bias_a;
        b *= bias_b;
        const auto i = static_cast<std::size_t>((z * size + y) * size + x);
        va[i] = std::clamp(a * in_head, 0.0, 1.0);
        vb[i] = std::clamp(b * in_head, 0.0, 1.0);
      }
  const Shape shape = dims == 3 ? Shape{1, size, size, size} : Shape{1, size, size};
  ImagePair pair;
  pair.id = "synth" + std::to_string(seed);
  pair.a = Tensor(shape, std::move(va));
  pair.b = Tensor(shape, std::move(vb));
  return pair;
}

Real pixel_correlation(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("pixel_correlation: shape mismatch");
  const auto x = a.data(), y = b.data();
  const auto n = static_cast<Real>(x.size());
  Real mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  Real sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

DatasetSplit split_dataset(const std::vector<std::string>& ids, const SplitCounts& counts, std::uint64_t seed) {
  const std::size_t held = counts.test + counts.validation;
  if (held + counts.train > ids.size() || (counts.train == 0 && held >= ids.size())) {
    throw ValidationError("split_dataset: " + std::to_string(ids.size()) + " ids cannot cover train=" +
                          std::to_string(counts.train) + " validation=" + std::to_string(counts.validation) +
                          " test=" + std::to_string(counts.test));
  }
  std::vector<std::string> order = ids;
  Rng rng(derive_seed(seed, 0x5b1));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
  DatasetSplit split;
  split.seed = seed;
  auto it = order.begin();
  split.test.assign(it, it + static_cast<std::ptrdiff_t>(counts.test));
  it += static_cast<std::ptrdiff_t>(counts.test);
  split.validation.assign(it, it + static_cast<std::ptrdiff_t>(counts.validation));
  it += static_cast<std::ptrdiff_t>(counts.validation);
  const std::size_t n_train = counts.train == 0 ? static_cast<std::size_t>(order.end() - it) : counts.train;
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  return split;
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() < 3 || f.size() > 4) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected id<TAB>path_a<TAB>path_b[<TAB>mask]");
    }
    ManifestEntry e{f[0], resolve(f[1]), resolve(f[2]), f.size() == 4 ? resolve(f[3]) : ""};
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ValidationError("manifest " + path + " lists no pairs");
  return out;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& e : entries) {
    os << e.id << '\t' << e.path_a << '\t' << e.path_b;
    if (!e.mask.empty()) os << '\t' << e.mask;
    os << '\n';
  }
}

LoadedImage load_image(const std::string& path, int dims) {
  LoadedImage out;
  if (ends_with(path, ".pgm") || ends_with(path, ".ppm") || ends_with(path, ".pnm")) {
    if (dims != 2) throw ValidationError(path + ": PGM/PPM images are 2D but the model expects volumes");
    Tensor img = read_pnm(path);
    if (img.dim(0) == 3) {
      YCbCr c = rgb_to_ycbcr(img);
      out.luma = c.y;
      out.cb = c.cb;
      out.cr = c.cr;
    } else {
      out.luma = img;
    }
    return out;
  }
  Tensor t = load_fmt1(path);
  if (static_cast<int>(t.rank()) == dims) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    t = Tensor(s, t.values());
  }
  if (static_cast<int>(t.rank()) != dims + 1 || t.dim(0) != 1) {
    throw ShapeError(path + ": expected a " + std::to_string(dims) + "D single-channel tensor, got " + shape_str(t.shape()));
  }
  const auto d = t.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  out.luma = (*lo < 0.0 || *hi > 1.0) ? normalize01(t) : t;
  return out;
}

ImagePair load_pair(const ManifestEntry& entry, int dims) {
  LoadedImage a = load_image(entry.path_a, dims), b = load_image(entry.path_b, dims);
  if (a.luma.shape() != b.luma.shape()) {
    throw ShapeError("pair " + entry.id + ": modality shapes differ, " + shape_str(a.luma.shape()) + " vs " +
                     shape_str(b.luma.shape()));
  }
  ImagePair p;
  p.id = entry.id;
  p.a = a.luma;
  p.b = b.luma;
  if (b.cb.defined()) {
    p.cb = b.cb;
    p.cr = b.cr;
  } else if (a.cb.defined()) {
    p.cb = a.cb;
    p.cr = a.cr;
  }
  if (!entry.mask.empty()) {
    Tensor m = load_image(entry.mask, dims).luma;
    p.a = apply_roi_mask(p.a, m);
    p.b = apply_roi_mask(p.b, m);
  }
  return p;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
  if (items.empty()) throw ValidationError("stack_batch: empty batch");
  std::vector<Tensor> parts;
  parts.reserve(items.size());
  for (const auto& t : items) {
    if (t.shape() != items[0].shape()) throw ShapeError("stack_batch: inconsistent item shapes");
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    parts.push_back(ops::reshape(t.detach(), s));
  }
  return parts.size() == 1 ? parts[0] : ops::concat(parts, 0);
}

}  // namespace fmamba
