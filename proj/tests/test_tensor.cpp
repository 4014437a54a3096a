#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fmamba/ops.hpp"
#include "fmamba/simd/kernels.hpp"
#include "fmamba/tensor_io.hpp"
#include "support.hpp"

using namespace fmamba;
using namespace fmamba::testing;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -3.0, double hi = 3.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& e : v) e = lo + (hi - lo) * rng.uniform();
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

const simd::KernelTable* vector_table() {
  if (simd::backend_available(simd::Backend::Avx2)) return &simd::table(simd::Backend::Avx2);
  if (simd::backend_available(simd::Backend::Neon)) return &simd::table(simd::Backend::Neon);
  return nullptr;
}

}  // namespace

TEST_CASE("vector kernels match the scalar reference bit for bit") {
  const simd::KernelTable* vec = vector_table();
  if (!vec) {
    MESSAGE("no vector backend on this machine; comparing scalar with itself");
    vec = &simd::scalar_table();
  }
  const simd::KernelTable& ref = simd::scalar_table();
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 7u, 8u, 9u, 16u, 31u, 64u, 257u}) {
    CAPTURE(n);
    const auto a = random_vec(n, 1 + n), b0 = random_vec(n, 100 + n, 0.5, 2.0), x = random_vec(n, 200 + n, -30, 30);
    std::vector<double> o1(n), o2(n);
    using Bin = void (*)(const double*, const double*, double*, std::size_t);
    for (auto [f, g] : {std::pair<Bin, Bin>{ref.add, vec->add}, {ref.sub, vec->sub}, {ref.mul, vec->mul}, {ref.div, vec->div}}) {
      f(a.data(), b0.data(), o1.data(), n);
      g(a.data(), b0.data(), o2.data(), n);
      CHECK(same_bits(o1, o2));
    }
    std::vector<double> y1 = b0, y2 = b0;
    ref.axpy(0.37, a.data(), y1.data(), n);
    vec->axpy(0.37, a.data(), y2.data(), n);
    CHECK(same_bits(y1, y2));
    const auto strided = random_vec(3 * n + 1, 9);
    y1 = b0;
    y2 = b0;
    ref.axpy_strided(-1.3, strided.data(), 3, y1.data(), n);
    vec->axpy_strided(-1.3, strided.data(), 3, y2.data(), n);
    CHECK(same_bits(y1, y2));
    ref.affine(2.5, -0.25, a.data(), o1.data(), n);
    vec->affine(2.5, -0.25, a.data(), o2.data(), n);
    CHECK(same_bits(o1, o2));
    const double d1 = ref.dot(a.data(), b0.data(), n), d2 = vec->dot(a.data(), b0.data(), n);
    CHECK(std::memcmp(&d1, &d2, sizeof d1) == 0);
    const double s1 = ref.sum(a.data(), n), s2 = vec->sum(a.data(), n);
    CHECK(std::memcmp(&s1, &s2, sizeof s1) == 0);
    using Un = void (*)(const double*, double*, std::size_t);
    for (auto [f, g] : {std::pair<Un, Un>{ref.exp, vec->exp}, {ref.sigmoid, vec->sigmoid}, {ref.silu, vec->silu}}) {
      f(x.data(), o1.data(), n);
      g(x.data(), o2.data(), n);
      CHECK(same_bits(o1, o2));
    }
    ref.leaky_relu(0.2, a.data(), o1.data(), n);
    vec->leaky_relu(0.2, a.data(), o2.data(), n);
    CHECK(same_bits(o1, o2));
  }
}

TEST_CASE("vector selective scan matches the scalar reference bit for bit") {
  const simd::KernelTable* vec = vector_table();
  if (!vec) vec = &simd::scalar_table();
  const simd::KernelTable& ref = simd::scalar_table();
  for (std::size_t C : {1u, 4u, 6u, 9u}) {
    const std::size_t L = 13, N = 3;
    const auto u = random_vec(L * C, 1), delta = random_vec(L * C, 2, 0.01, 0.5), a = random_vec(N * C, 3, -2.0, -0.1),
               b = random_vec(L * N, 4), c = random_vec(L * N, 5), d = random_vec(C, 6);
    std::vector<double> y1(L * C), y2(L * C), h1(L * N * C), h2(L * N * C);
    simd::ScanForwardArgs f{L, C, N, 5, u.data(), delta.data(), a.data(), b.data(), c.data(), d.data(), y1.data(), h1.data()};
    ref.scan_forward(f);
    f.y = y2.data();
    f.h_all = h2.data();
    vec->scan_forward(f);
    CHECK(same_bits(y1, y2));
    CHECK(same_bits(h1, h2));
    const auto gy = random_vec(L * C, 7);
    std::vector<std::vector<double>> g1(6), g2(6);
    const std::size_t sizes[6] = {L * C, L * C, N * C, L * N, L * N, C};
    for (int i = 0; i < 6; ++i) {
      g1[i].assign(sizes[i], 0.5);
      g2[i].assign(sizes[i], 0.5);
    }
    auto run = [&](const simd::KernelTable& t, std::vector<std::vector<double>>& g) {
      simd::ScanBackwardArgs bw;
      bw.fwd = f;
      bw.fwd.y = y1.data();
      bw.fwd.h_all = nullptr;
      bw.grad_y = gy.data();
      bw.h_all = h1.data();
      bw.grad_u = g[0].data();
      bw.grad_delta = g[1].data();
      bw.grad_a_t = g[2].data();
      bw.grad_b = g[3].data();
      bw.grad_c = g[4].data();
      bw.grad_d = g[5].data();
      t.scan_backward(bw);
    };
    run(ref, g1);
    run(*vec, g2);
    for (int i = 0; i < 6; ++i) CHECK(same_bits(g1[i], g2[i]));
  }
}

TEST_CASE("exp kernel is accurate") {
  for (double x : {-700.0, -20.0, -1.0, -1e-3, 0.0, 1e-3, 0.5, 1.0, 10.0, 700.0}) {
    CHECK(simd::exp_reference(x) == doctest::Approx(std::exp(x)).epsilon(1e-14));
  }
  CHECK(simd::exp_reference(0.0) == 1.0);
}

TEST_CASE("broadcasting follows right-aligned rules") {
  CHECK(ops::broadcast_shape({2, 1, 3}, {4, 1}) == Shape{2, 4, 3});
  CHECK_THROWS_AS(ops::broadcast_shape({2, 3}, {4, 3}), ShapeError);
  const Tensor a = Tensor::from({2, 1}, {1, 2});
  const Tensor b = Tensor::from({3}, {10, 20, 30});
  const Tensor s = ops::add(a, b);
  CHECK(s.shape() == Shape{2, 3});
  CHECK(s.values() == std::vector<Real>{11, 21, 31, 12, 22, 32});
}

TEST_CASE("matmul matches a naive triple loop") {
  const Tensor a = uniform({5, 7}, 1), b = uniform({7, 3}, 2);
  const Tensor c = ops::matmul(a, b);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      Real acc = 0.0;
      for (int k = 0; k < 7; ++k) acc += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK_THROWS_AS(ops::matmul(a, a), ShapeError);
}

TEST_CASE("reductions, reshape, permute, slice and concat") {
  const Tensor x = Tensor::from({2, 3}, {1, 5, 3, -2, 0, 4});
  CHECK(ops::sum(x).item() == 11.0);
  CHECK(ops::mean(x, {1}).values() == std::vector<Real>{3.0, 2.0 / 3.0});
  CHECK(ops::max(x, {0}).values() == std::vector<Real>{1, 5, 4});
  CHECK(ops::permute(x, {1, 0}).values() == std::vector<Real>{1, -2, 5, 0, 3, 4});
  CHECK(ops::slice(x, 1, 1, 2).values() == std::vector<Real>{5, 3, 0, 4});
  CHECK(ops::concat({x, x}, 0).shape() == Shape{4, 3});
  CHECK_THROWS_AS(ops::reshape(x, {4}), ShapeError);
  CHECK(ops::reshape(x, {3, 2}).values() == x.values());
}

TEST_CASE("token gather and scatter are inverse for a bijective order") {
  const Tensor grid = uniform({2, 3, 6}, 3);
  const std::vector<std::int64_t> order{4, 0, 5, 2, 1, 3};
  const Tensor tok = ops::gather_tokens(grid, order);
  CHECK(tok.shape() == Shape{12, 3});
  CHECK(bit_equal(ops::scatter_tokens(tok, order, 2), grid));
}

TEST_CASE("primitive gradients pass finite differences") {
  using F = std::function<Tensor(const std::vector<Tensor>&)>;
  const std::vector<std::pair<const char*, F>> unary = {
      {"exp", [](const auto& v) { return ops::exp(v[0]); }},
      {"sigmoid", [](const auto& v) { return ops::sigmoid(v[0]); }},
      {"silu", [](const auto& v) { return ops::silu(v[0]); }},
      {"softplus", [](const auto& v) { return ops::softplus(v[0]); }},
      {"leaky_relu", [](const auto& v) { return ops::leaky_relu(v[0]); }},
      {"abs", [](const auto& v) { return ops::abs(v[0]); }},
      {"square", [](const auto& v) { return ops::square(v[0]); }},
      {"l2_norm", [](const auto& v) { return ops::l2_norm(v[0]); }},
      {"max_axis", [](const auto& v) { return ops::max(v[0], {1}); }},
      {"mean_axis", [](const auto& v) { return ops::mean(v[0], {0}, true); }},
      {"permute", [](const auto& v) { return ops::permute(v[0], {1, 0}); }},
  };
  for (const auto& [name, f] : unary) {
    CAPTURE(name);
    const auto r = gradcheck(f, {away_from_zero({3, 4}, 11)}, 1e-4);
    CHECK_MESSAGE(r.ok, r.detail);
  }
  const auto positive = [](const Shape& s, std::uint64_t seed) { return uniform(s, seed, 0.2, 2.0); };
  CHECK(gradcheck([](const auto& v) { return ops::log(v[0]); }, {positive({5}, 2)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::sqrt(v[0]); }, {positive({5}, 3)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::div(v[0], v[1]); }, {away_from_zero({3, 2}, 4), positive({2}, 5)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::mul(v[0], v[1]); }, {away_from_zero({3, 1}, 6), away_from_zero({1, 4}, 7)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::maximum(v[0], v[1]); }, {away_from_zero({6}, 8), away_from_zero({6}, 9)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::matmul(v[0], v[1]); }, {away_from_zero({3, 4}, 10), away_from_zero({4, 2}, 12)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::filter1d_valid(v[0], {0.25, 0.5, 0.25}, 2); }, {away_from_zero({1, 2, 6}, 13)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::upsample_nearest(v[0], 2); }, {away_from_zero({1, 2, 3, 3}, 14)}, 1e-4).ok);
  CHECK(gradcheck([](const auto& v) { return ops::concat({v[0], ops::slice(v[1], 0, 1, 2)}, 0); }, {away_from_zero({2, 3}, 15), away_from_zero({4, 3}, 16)}, 1e-4).ok);
}

TEST_CASE("checked mode reports the first non-finite op output") {
  ops::set_check_finite(true);
  CHECK_THROWS_AS(ops::log(Tensor::from({2}, {1.0, -1.0})), NumericalError);
  ops::set_check_finite(false);
  CHECK_FALSE(ops::log(Tensor::from({2}, {1.0, -1.0})).all_finite());
}

TEST_CASE("rng is reproducible and its state round-trips") {
  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
  (void)a.normal(0, 1);
  Rng c(0);
  c.deserialize(a.serialize());
  for (int i = 0; i < 5; ++i) CHECK(a.normal(0, 1) == c.normal(0, 1));
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
}

TEST_CASE("FMT1 round-trips both dtypes") {
  const Tensor t = uniform({2, 3, 4}, 5);
  std::stringstream ss;
  write_fmt1(ss, t);
  CHECK(bit_equal(read_fmt1(ss), t));
  std::stringstream s32;
  write_fmt1(s32, t, DType::F32);
  const Tensor r = read_fmt1(s32);
  CHECK(max_abs_diff(r, t) < 1e-6);
  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(read_fmt1(bad), IoError);
}
