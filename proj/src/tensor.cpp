#include "fmamba/tensor.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fmamba {
namespace {

std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("invalid shape: empty");
  for (auto d : shape) {
    if (d < 1) throw ShapeError("invalid shape " + shape_str(shape) + ": dimensions must be >= 1");
  }
}

Tensor::Tensor(Shape shape, std::vector<Real> data) {
  check_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->id = next_id();
}

Tensor Tensor::create(const Shape& shape, const Init& init) {
  check_shape(shape);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<Real> v(n, 0.0);
  switch (init.kind) {
    case InitKind::Zeros:
      break;
    case InitKind::Ones:
      std::fill(v.begin(), v.end(), 1.0);
      break;
    case InitKind::Uniform: {
      Rng rng(init.seed);
      for (auto& x : v) x = rng.uniform();
      break;
    }
    case InitKind::Normal: {
      Rng rng(init.seed);
      for (auto& x : v) x = rng.normal(init.mean, init.stddev);
      break;
    }
  }
  return Tensor(shape, std::move(v));
}

Tensor Tensor::full(const Shape& shape, Real value) {
  check_shape(shape);
  return Tensor(shape, std::vector<Real>(static_cast<std::size_t>(shape_numel(shape)), value));
}

Tensor Tensor::from(const Shape& shape, std::initializer_list<Real> values) {
  return Tensor(shape, std::vector<Real>(values));
}

TensorImpl& Tensor::impl() const {
  if (!impl_) throw Error("use of an undefined tensor");
  return *impl_;
}

std::int64_t Tensor::dim(std::int64_t axis) const {
  const auto r = static_cast<std::int64_t>(rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(axis)];
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

Real Tensor::at(std::initializer_list<std::int64_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::int64_t off = 0;
  std::size_t k = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[k]) throw ShapeError("index out of range for " + shape_str(s));
    off = off * s[k] + i;
    ++k;
  }
  return impl().data[static_cast<std::size_t>(off)];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  return *this;
}

Tensor Tensor::clone() const { return Tensor(shape(), impl().data); }

Tensor Tensor::detach() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl().shape;
  t.impl_->data = impl().data;
  t.impl_->id = next_id();
  return t;
}

bool Tensor::all_finite() const {
  for (Real v : impl().data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

Real Rng::uniform() { return static_cast<Real>(engine_() >> 11) * 0x1.0p-53; }

Real Rng::normal(Real mean, Real stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  const Real u1 = 1.0 - uniform();  // (0, 1]
  const Real u2 = uniform();
  const Real radius = std::sqrt(-2.0 * std::log(u1));
  const Real angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * (radius * std::cos(angle));
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) throw ValidationError("Rng::below with zero bound");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % bound;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << std::bit_cast<std::uint64_t>(spare_);
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  int spare_flag = 0;
  std::uint64_t spare_bits = 0;
  is >> engine_ >> spare_flag >> spare_bits;
  if (!is) throw IoError("corrupt RNG state");
  has_spare_ = spare_flag != 0;
  spare_ = std::bit_cast<Real>(spare_bits);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace fmamba
