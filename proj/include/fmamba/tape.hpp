#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "fmamba/tensor.hpp"

namespace fmamba {

/// Gradient buffers handed to a node's backward function, one per input.
/// Null entries mark inputs that do not need a gradient.
using GradRefs = std::vector<std::vector<Real>*>;
using BackwardFn = std::function<void(const std::vector<Real>& grad_out, GradRefs& grad_in)>;

/// Ordered record of differentiable operations.
///
/// Ops append nodes only while a tape is active on the calling thread
/// (see TapeScope) and at least one input is tracked. Recording order is a
/// topological order, so the reverse sweep visits each node once.
class GradTape {
 public:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  void record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  bool produced(const Tensor& t) const;
  void clear();

 private:
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::size_t> producer_;
};

/// Activates a tape for the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* previous_;
};

GradTape* active_tape();

/// Result of a reverse sweep: gradient per tracked tensor id.
class Gradients {
 public:
  /// Gradient of the scalar output w.r.t. `t`; zeros when `t` never
  /// influenced the output.
  Tensor of(const Tensor& t) const;
  bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }
  std::unordered_map<std::uint64_t, std::vector<Real>>& raw() { return grads_; }

 private:
  std::unordered_map<std::uint64_t, std::vector<Real>> grads_;
};

Gradients backward(const GradTape& tape, const Tensor& scalar_output);

/// Helper for op implementations: records `out` on the active tape when any
/// input is tracked.
bool record_op(std::vector<Tensor> inputs, Tensor& out, BackwardFn backward);
bool any_tracked(std::initializer_list<const Tensor*> inputs);

}  // namespace fmamba
