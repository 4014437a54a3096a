// Feature similarity index: phase congruency from a log-Gabor bank
// (4 scales x 4 orientations) plus Scharr gradient magnitude.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include "fmamba/metrics.hpp"

namespace fmamba {
namespace {

constexpr int kScales = 4;
constexpr int kOrients = 4;
constexpr Real kMinWaveLength = 6.0;
constexpr Real kMult = 2.0;
constexpr Real kSigmaOnf = 0.55;
constexpr Real kDThetaOnSigma = 1.2;
constexpr Real kNoiseK = 2.0;
constexpr Real kEpsilon = 1e-4;
constexpr Real kT1 = 0.85;
constexpr Real kT2 = 160.0;

using cplx = std::complex<double>;

// FFTW planning is not thread-safe.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

class Fft2 {
 public:
  Fft2(std::int64_t rows, std::int64_t cols) : n_(rows * cols) {
    buf_ = fftw_alloc_complex(static_cast<std::size_t>(n_));
    std::lock_guard<std::mutex> lock(plan_mutex());
    fwd_ = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Fft2() {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(buf_);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  void forward(std::vector<cplx>& data) { run(fwd_, data, 1.0); }
  // Normalized inverse (divides by rows*cols).
  void inverse(std::vector<cplx>& data) { run(inv_, data, 1.0 / static_cast<double>(n_)); }

 private:
  void run(fftw_plan plan, std::vector<cplx>& data, double scale) {
    for (std::int64_t i = 0; i < n_; ++i) {
      buf_[i][0] = data[static_cast<std::size_t>(i)].real();
      buf_[i][1] = data[static_cast<std::size_t>(i)].imag();
    }
    fftw_execute(plan);
    for (std::int64_t i = 0; i < n_; ++i) data[static_cast<std::size_t>(i)] = cplx(buf_[i][0] * scale, buf_[i][1] * scale);
  }

  std::int64_t n_;
  fftw_complex* buf_;
  fftw_plan fwd_, inv_;
};

// Frequency coordinate of each FFT bin (already in unshifted order).
std::vector<Real> freq_axis(std::int64_t n) {
  std::vector<Real> centered(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    centered[static_cast<std::size_t>(i)] =
        n % 2 ? (i - (n - 1) / 2.0) / static_cast<Real>(n - 1) : (i - n / 2.0) / static_cast<Real>(n);
  }
  if (n == 1) centered[0] = 0.0;
  std::vector<Real> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = centered[static_cast<std::size_t>((i + n / 2) % n)];
  return out;
}

Real median(std::vector<Real> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2), v.end());
  const Real hi = v[n / 2];
  if (n % 2) return hi;
  const Real lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n / 2));
  return 0.5 * (lo + hi);
}

// Zero-padded 'same' correlation with the 3x3 Scharr pair, magnitude.
std::vector<Real> scharr_magnitude(const std::vector<Real>& img, std::int64_t rows, std::int64_t cols) {
  static constexpr Real dx[3][3] = {{3, 0, -3}, {10, 0, -10}, {3, 0, -3}};
  static constexpr Real dy[3][3] = {{3, 10, 3}, {0, 0, 0}, {-3, -10, -3}};
  std::vector<Real> out(img.size());
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) {
      Real gx = 0.0, gy = 0.0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const std::int64_t ii = i + a, jj = j + b;
          if (ii < 0 || ii >= rows || jj < 0 || jj >= cols) continue;
          const Real v = img[static_cast<std::size_t>(ii * cols + jj)];
          // conv2 flips the kernel
          gx += dx[1 - a][1 - b] / 16.0 * v;
          gy += dy[1 - a][1 - b] / 16.0 * v;
        }
      out[static_cast<std::size_t>(i * cols + j)] = std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

// Box-average then decimate by F when the image exceeds 256 on its short side.
std::vector<Real> downsample(const std::vector<Real>& img, std::int64_t& rows, std::int64_t& cols) {
  const std::int64_t F = std::max<std::int64_t>(1, std::llround(std::min(rows, cols) / 256.0));
  if (F == 1) return img;
  // 'same' box filter of size F (anchor as in conv2 with an even kernel).
  const std::int64_t off = (F - 1) / 2;
  std::vector<Real> out;
  std::int64_t nr = 0, nc = 0;
  for (std::int64_t i = 0; i < rows; i += F) ++nr;
  for (std::int64_t j = 0; j < cols; j += F) ++nc;
  out.reserve(static_cast<std::size_t>(nr * nc));
  for (std::int64_t i = 0; i < rows; i += F)
    for (std::int64_t j = 0; j < cols; j += F) {
      Real acc = 0.0;
      for (std::int64_t a = 0; a < F; ++a)
        for (std::int64_t b = 0; b < F; ++b) {
          const std::int64_t ii = i - off + a, jj = j - off + b;
          if (ii < 0 || ii >= rows || jj < 0 || jj >= cols) continue;
          acc += img[static_cast<std::size_t>(ii * cols + jj)];
        }
      out.push_back(acc / static_cast<Real>(F * F));
    }
  rows = nr;
  cols = nc;
  return out;
}

}  // namespace

std::vector<Real> phase_congruency(const std::vector<Real>& img, std::int64_t rows, std::int64_t cols) {
  const auto N = static_cast<std::size_t>(rows * cols);
  Fft2 fft(rows, cols);
  std::vector<cplx> image_fft(img.begin(), img.end());
  fft.forward(image_fft);

  const auto fx = freq_axis(cols), fy = freq_axis(rows);
  std::vector<Real> radius(N), sin_t(N), cos_t(N), lowpass(N);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) {
      const auto k = static_cast<std::size_t>(i * cols + j);
      const Real x = fx[static_cast<std::size_t>(j)], y = fy[static_cast<std::size_t>(i)];
      const Real r = std::sqrt(x * x + y * y);
      lowpass[k] = 1.0 / (1.0 + std::pow(r / 0.45, 30.0));
      radius[k] = r;
      const Real th = std::atan2(-y, x);
      sin_t[k] = std::sin(th);
      cos_t[k] = std::cos(th);
    }
  radius[0] = 1.0;

  std::vector<std::vector<Real>> log_gabor(kScales, std::vector<Real>(N));
  const Real log_sig = 2.0 * std::log(kSigmaOnf) * std::log(kSigmaOnf);
  for (int s = 0; s < kScales; ++s) {
    const Real fo = 1.0 / (kMinWaveLength * std::pow(kMult, s));
    for (std::size_t k = 0; k < N; ++k) {
      const Real l = std::log(radius[k] / fo);
      log_gabor[static_cast<std::size_t>(s)][k] = std::exp(-(l * l) / log_sig) * lowpass[k];
    }
    log_gabor[static_cast<std::size_t>(s)][0] = 0.0;
  }

  const Real theta_sigma = std::numbers::pi / kOrients / kDThetaOnSigma;
  std::vector<Real> energy_all(N, 0.0), an_all(N, 0.0);
  std::vector<cplx> work(N);
  std::vector<std::vector<cplx>> eo(kScales, std::vector<cplx>(N));
  std::vector<std::vector<Real>> ifft_filters(kScales, std::vector<Real>(N));
  std::vector<Real> filter(N);

  for (int o = 0; o < kOrients; ++o) {
    const Real angl = o * std::numbers::pi / kOrients;
    std::vector<Real> spread(N);
    for (std::size_t k = 0; k < N; ++k) {
      const Real ds = sin_t[k] * std::cos(angl) - cos_t[k] * std::sin(angl);
      const Real dc = cos_t[k] * std::cos(angl) + sin_t[k] * std::sin(angl);
      const Real dtheta = std::fabs(std::atan2(ds, dc));
      spread[k] = std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
    }
    std::vector<Real> sum_e(N, 0.0), sum_o(N, 0.0), sum_an(N, 0.0), energy(N, 0.0);
    Real em_n = 0.0;
    for (int s = 0; s < kScales; ++s) {
      const auto su = static_cast<std::size_t>(s);
      for (std::size_t k = 0; k < N; ++k) filter[k] = log_gabor[su][k] * spread[k];
      for (std::size_t k = 0; k < N; ++k) work[k] = cplx(filter[k], 0.0);
      fft.inverse(work);
      const Real root_n = std::sqrt(static_cast<Real>(N));
      for (std::size_t k = 0; k < N; ++k) ifft_filters[su][k] = work[k].real() * root_n;
      for (std::size_t k = 0; k < N; ++k) eo[su][k] = image_fft[k] * filter[k];
      fft.inverse(eo[su]);
      for (std::size_t k = 0; k < N; ++k) {
        sum_an[k] += std::abs(eo[su][k]);
        sum_e[k] += eo[su][k].real();
        sum_o[k] += eo[su][k].imag();
      }
      if (s == 0) {
        for (std::size_t k = 0; k < N; ++k) em_n += filter[k] * filter[k];
      }
    }
    for (std::size_t k = 0; k < N; ++k) {
      const Real xe = std::sqrt(sum_e[k] * sum_e[k] + sum_o[k] * sum_o[k]) + kEpsilon;
      const Real me = sum_e[k] / xe, mo = sum_o[k] / xe;
      for (int s = 0; s < kScales; ++s) {
        const Real e = eo[static_cast<std::size_t>(s)][k].real(), od = eo[static_cast<std::size_t>(s)][k].imag();
        energy[k] += e * me + od * mo - std::fabs(e * mo - od * me);
      }
    }
    std::vector<Real> e2(N);
    for (std::size_t k = 0; k < N; ++k) e2[k] = std::norm(eo[0][k]);
    const Real mean_e2n = -median(std::move(e2)) / std::log(0.5);
    const Real noise_power = em_n > 0.0 ? mean_e2n / em_n : 0.0;
    Real sum_an2 = 0.0, sum_aiaj = 0.0;
    for (int s = 0; s < kScales; ++s)
      for (std::size_t k = 0; k < N; ++k) sum_an2 += ifft_filters[static_cast<std::size_t>(s)][k] * ifft_filters[static_cast<std::size_t>(s)][k];
    for (int si = 0; si < kScales - 1; ++si)
      for (int sj = si + 1; sj < kScales; ++sj)
        for (std::size_t k = 0; k < N; ++k)
          sum_aiaj += ifft_filters[static_cast<std::size_t>(si)][k] * ifft_filters[static_cast<std::size_t>(sj)][k];
    const Real noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
    const Real tau = std::sqrt(noise_energy2 / 2.0);
    const Real noise_mean = tau * std::sqrt(std::numbers::pi / 2.0);
    const Real noise_sigma = std::sqrt((2.0 - std::numbers::pi / 2.0) * tau * tau);
    const Real T = (noise_mean + kNoiseK * noise_sigma) / 1.7;
    for (std::size_t k = 0; k < N; ++k) {
      energy_all[k] += std::max(energy[k] - T, 0.0);
      an_all[k] += sum_an[k];
    }
  }
  std::vector<Real> pc(N);
  for (std::size_t k = 0; k < N; ++k) pc[k] = an_all[k] > 0.0 ? energy_all[k] / an_all[k] : 0.0;
  return pc;
}

Real fsim(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("fsim: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  for (std::size_t i = 0; i + 2 < x.rank(); ++i) {
    if (x.shape()[i] != 1) {
      throw ValidationError("fsim supports single 2D images only (3D volumes are unsupported), got " +
                            shape_str(x.shape()));
    }
  }
  if (x.rank() < 2) throw ShapeError("fsim expects a 2D image");
  std::int64_t rows = x.dim(-2), cols = x.dim(-1);
  if (rows < 32 || cols < 32) throw ShapeError("fsim needs images of at least 32x32, got " + shape_str(x.shape()));
  std::vector<Real> a(x.numel()), b(y.numel());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = x.data()[i] * 255.0;
    b[i] = y.data()[i] * 255.0;
  }
  std::int64_t r2 = rows, c2 = cols;
  a = downsample(a, rows, cols);
  b = downsample(b, r2, c2);
  const auto pc1 = phase_congruency(a, rows, cols);
  const auto pc2 = phase_congruency(b, rows, cols);
  const auto g1 = scharr_magnitude(a, rows, cols);
  const auto g2 = scharr_magnitude(b, rows, cols);
  Real num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Real pc_sim = (2.0 * (pc1[k] * pc2[k]) + kT1) / (pc1[k] * pc1[k] + pc2[k] * pc2[k] + kT1);
    const Real g_sim = (2.0 * (g1[k] * g2[k]) + kT2) / (g1[k] * g1[k] + g2[k] * g2[k] + kT2);
    const Real pcm = std::max(pc1[k], pc2[k]);
    num += g_sim * pc_sim * pcm;
    den += pcm;
  }
  if (den == 0.0) return 1.0;
  return num / den;
}

}  // namespace fmamba
