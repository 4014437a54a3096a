#include <doctest.h>

#include <sstream>

#include "fmamba/data.hpp"
#include "fmamba/losses.hpp"
#include "fmamba/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fmamba;
using namespace fmamba::testing;

namespace {

// 3x3 box blur with clamped borders.
Tensor blur(const Tensor& x, int H, int W) {
  std::vector<Real> out(x.numel());
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      Real acc = 0;
      for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b) {
          const int ii = std::clamp(i + a, 0, H - 1), jj = std::clamp(j + b, 0, W - 1);
          acc += x.data()[static_cast<std::size_t>(ii * W + jj)];
        }
      out[static_cast<std::size_t>(i * W + j)] = acc / 9.0;
    }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

TEST_CASE("loss weights default to pixel 2, grad 10, ssim 5") {
  const LossWeights w;
  CHECK(w.pixel == 2.0);
  CHECK(w.grad == 10.0);
  CHECK(w.ssim == 5.0);
  CHECK_THROWS_AS((LossWeights{-1.0, 1.0, 1.0}.validate()), ValidationError);
}

TEST_CASE("total loss is exactly zero when all three images coincide") {
  for (int dims : {2, 3}) {
    const Shape s = dims == 2 ? Shape{2, 1, 16, 16} : Shape{1, 1, 12, 12, 12};
    const Tensor x = uniform(s, 3, 0, 1);
    const LossBreakdown lb = total_loss(x, x, x, LossWeights{}, dims);
    CHECK(lb.total.item() == 0.0);
    CHECK(lb.pixel == 0.0);
    CHECK(lb.grad == 0.0);
    CHECK(lb.ssim == 0.0);
  }
}

TEST_CASE("total loss is the weighted sum of its components") {
  const Tensor a = uniform({1, 1, 16, 16}, 1, 0, 1), b = uniform({1, 1, 16, 16}, 2, 0, 1), f = uniform({1, 1, 16, 16}, 3, 0, 1);
  const LossWeights w{1.5, 3.0, 0.5};
  const LossBreakdown lb = total_loss(f, a, b, w, 2);
  CHECK(std::abs(lb.total.item() - (w.pixel * lb.pixel + w.grad * lb.grad + w.ssim * lb.ssim)) < 1e-10);
}

TEST_CASE("pixel loss targets the elementwise maximum") {
  const Tensor a = Tensor::from({1, 1, 1, 2}, {0.2, 0.8}), b = Tensor::from({1, 1, 1, 2}, {0.6, 0.1});
  CHECK(pixel_loss(Tensor::from({1, 1, 1, 2}, {0.6, 0.8}), a, b).item() == 0.0);
  CHECK(pixel_loss(Tensor::from({1, 1, 1, 2}, {0.5, 0.8}), a, b).item() == doctest::Approx(0.05));
}

TEST_CASE("gradient map of a constant image is the epsilon floor") {
  const Tensor g = gradient_map(Tensor::full({1, 1, 6, 6}, 0.3), 2);
  for (Real v : g.data()) CHECK(v == doctest::Approx(std::sqrt(kGradEps)));
}

TEST_CASE("SSIM matches the explicit windowed oracle") {
  for (std::uint64_t s = 1; s <= 3; ++s) {
    const Tensor x = uniform({1, 1, 32, 32}, s, 0, 1), y = uniform({1, 1, 32, 32}, s + 10, 0, 1);
    const Real ours = ssim(x, y, 2).item();
    CHECK(std::abs(ours - naive_ssim_2d(x.values(), y.values(), 32, 32)) < 1e-6);
  }
  const Tensor x = uniform({1, 1, 32, 32}, 4, 0, 1);
  CHECK(ssim(x, x, 2).item() == 1.0);
  CHECK_THROWS_AS(ssim(uniform({1, 1, 8, 8}, 1), uniform({1, 1, 8, 8}, 2), 2), ShapeError);
}

TEST_CASE("loss gradients pass finite differences") {
  for (std::uint64_t s = 1; s <= 2; ++s) {
    const Tensor a = uniform({1, 1, 12, 12}, s, 0, 1), b = uniform({1, 1, 12, 12}, s + 1, 0, 1);
    auto r = gradcheck([&](const auto& v) { return total_loss(v[0], a, b, LossWeights{}, 2).total; },
                       {uniform({1, 1, 12, 12}, s + 2, 0, 1)}, 1e-3);
    CHECK_MESSAGE(r.ok, r.detail);
    const Tensor a3 = uniform({1, 1, 11, 11, 11}, s, 0, 1), b3 = uniform({1, 1, 11, 11, 11}, s + 1, 0, 1);
    r = gradcheck([&](const auto& v) { return total_loss(v[0], a3, b3, LossWeights{}, 3).total; },
                  {uniform({1, 1, 11, 11, 11}, s + 2, 0, 1)}, 1e-3);
    CHECK_MESSAGE(r.ok, r.detail);
    r = gradcheck([](const auto& v) { return gradient_map(v[0], 2); }, {uniform({1, 1, 5, 6}, s)}, 1e-4);
    CHECK_MESSAGE(r.ok, r.detail);
  }
}

TEST_CASE("PSNR agrees with the closed form") {
  const Tensor x = Tensor::full({1, 1, 8, 8}, 0.5);
  const Tensor y = Tensor::full({1, 1, 8, 8}, 0.6);
  CHECK(std::abs(psnr(x, y) - 10.0 * std::log10(1.0 / 0.01)) < 0.01);
  CHECK(psnr(x, x) == kPsnrIdentical);
}

TEST_CASE("entropy of constructed histograms") {
  CHECK(entropy(Tensor::full({1, 16, 16}, 0.4)) == 0.0);
  std::vector<Real> ramp(256);
  for (int i = 0; i < 256; ++i) ramp[static_cast<std::size_t>(i)] = (i + 0.5) / 256.0;
  CHECK(entropy(Tensor({1, 16, 16}, ramp)) == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("identity scores are exactly one") {
  const ImagePair p = synth_pair(5, 2, 64);
  CHECK(fsim(p.a, p.a) == 1.0);
  CHECK(ms_ssim(p.a, p.a, 2, MsSsimOptions{5, true}) == 1.0);
  CHECK(fmi(p.a, p.a, p.a) == 1.0);
  const Tensor big = uniform({1, 176, 176}, 3, 0, 1);
  CHECK(ms_ssim(big, big, 2) == 1.0);
}

TEST_CASE("ms_ssim too small without auto reduction is an error naming the minimum") {
  const Tensor x = uniform({1, 64, 64}, 1, 0, 1);
  CHECK_THROWS_WITH_AS(ms_ssim(x, x, 2), doctest::Contains("176"), ShapeError);
}

TEST_CASE("degradation lowers the structural metrics") {
  const ImagePair p = synth_pair(9, 2, 64);
  const Tensor blurred = blur(p.a, 64, 64);
  CHECK(fsim(p.a, blurred) < 1.0);
  CHECK(ssim(p.a, blurred, 2).item() < 1.0);
  CHECK(fsim(p.a, blurred) > fsim(p.a, uniform({1, 64, 64}, 4, 0, 1)));
}

TEST_CASE("fsim is symmetric") {
  const ImagePair p = synth_pair(11, 2, 48);
  CHECK(fsim(p.a, p.b) == fsim(p.b, p.a));
}

TEST_CASE("metric report round-trips and its footer matches a recomputation") {
  std::vector<MetricRow> rows{{"p1", {30.0, 0.8, 0.5, 0.9, 6.0}}, {"p2", {kPsnrIdentical, 0.6, 0.7, 0.7, 7.0}}};
  std::stringstream ss;
  write_report(ss, rows, 2);
  const std::string text = ss.str();
  CHECK(text.rfind("pair_id,psnr,ssim,fmi,fsim,en\n", 0) == 0);
  CHECK(text.find("inf") != std::string::npos);
  int dims = 0;
  const auto back = read_report(ss, dims);
  CHECK(dims == 2);
  REQUIRE(back.size() == 2);
  CHECK(back[1].values[0] == kPsnrIdentical);
  const auto agg = aggregate(back, 5);
  CHECK(agg[0].mean == 30.0);  // infinite PSNR excluded
  CHECK(agg[0].excluded == 1);
  CHECK(agg[1].mean == doctest::Approx(0.7));
  CHECK(agg[1].stddev == doctest::Approx(0.1));
  const auto single = aggregate({rows[0]}, 5);
  CHECK(single[2].mean == 0.5);
  CHECK(single[2].stddev == 0.0);
}
