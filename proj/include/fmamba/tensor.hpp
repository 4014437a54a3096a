#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmamba {

using Real = double;
using Shape = std::vector<std::int64_t>;

// Error taxonomy. Validation errors map to CLI exit code 1, numerical
// aborts to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ValidationError : public Error {
 public:
  using Error::Error;
};
class NumericalError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);
void check_shape(const Shape& shape);

enum class InitKind { Zeros, Ones, Uniform, Normal };

struct Init {
  InitKind kind = InitKind::Zeros;
  std::uint64_t seed = 0;
  Real mean = 0.0;
  Real stddev = 1.0;

  static Init zeros() { return {InitKind::Zeros}; }
  static Init ones() { return {InitKind::Ones}; }
  static Init uniform(std::uint64_t seed) { return {InitKind::Uniform, seed}; }
  static Init normal(std::uint64_t seed, Real mean, Real stddev) {
    return {InitKind::Normal, seed, mean, stddev};
  }
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  bool requires_grad = false;
  bool on_tape = false;
  std::uint64_t id = 0;
};

/// Dense row-major tensor with shared, reference-counted storage.
///
/// Copies share storage. Values are treated as immutable once an op has
/// consumed them; `mutable_data` exists for loaders and the optimizer,
/// which only write between forward passes.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<Real> data);

  static Tensor create(const Shape& shape, const Init& init);
  static Tensor zeros(const Shape& shape) { return create(shape, Init::zeros()); }
  static Tensor ones(const Shape& shape) { return create(shape, Init::ones()); }
  static Tensor full(const Shape& shape, Real value);
  static Tensor scalar(Real value) { return Tensor({1}, {value}); }
  static Tensor from(const Shape& shape, std::initializer_list<Real> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::int64_t dim(std::int64_t axis) const;
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t numel() const { return impl().data.size(); }
  std::uint64_t id() const { return impl().id; }

  std::span<const Real> data() const { return impl().data; }
  std::span<Real> mutable_data() { return impl().data; }
  const std::vector<Real>& values() const { return impl().data; }
  Real item() const;
  Real at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl().requires_grad; }
  Tensor& set_requires_grad(bool on);
  /// True when gradients can flow to this tensor (leaf parameter or the
  /// output of a recorded op).
  bool tracked() const { return impl().requires_grad || impl().on_tape; }
  void mark_on_tape() { impl().on_tape = true; }

  /// Independent copy of the values, never tracked.
  Tensor clone() const;
  /// Same storage, not tracked.
  Tensor detach() const;

  bool all_finite() const;

 private:
  TensorImpl& impl() const;
  std::shared_ptr<TensorImpl> impl_;
};

/// Deterministic stream of uniform doubles in [0, 1) and Box-Muller normals.
///
/// Built on mt19937_64 with 53-bit mantissa extraction so the sequence is
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  Real uniform();
  Real normal(Real mean, Real stddev);
  std::uint64_t next_u64();
  std::uint64_t below(std::uint64_t bound);

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  Real spare_ = 0.0;
};

/// splitmix64 mixing of a base seed with a stream index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace fmamba
