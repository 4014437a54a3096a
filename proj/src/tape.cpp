#include "fmamba/tape.hpp"

namespace fmamba {
namespace {
thread_local GradTape* g_active = nullptr;
}

void GradTape::record(std::vector<Tensor> inputs, Tensor& output, BackwardFn backward) {
  output.mark_on_tape();
  producer_[output.id()] = nodes_.size();
  nodes_.push_back(Node{std::move(inputs), output, std::move(backward)});
}

bool GradTape::produced(const Tensor& t) const { return producer_.count(t.id()) != 0; }

void GradTape::clear() {
  nodes_.clear();
  producer_.clear();
}

TapeScope::TapeScope(GradTape& tape) : previous_(g_active) { g_active = &tape; }
TapeScope::~TapeScope() { g_active = previous_; }

GradTape* active_tape() { return g_active; }

bool any_tracked(std::initializer_list<const Tensor*> inputs) {
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->tracked()) return true;
  }
  return false;
}

bool record_op(std::vector<Tensor> inputs, Tensor& out, BackwardFn backward) {
  GradTape* tape = g_active;
  if (!tape) return false;
  bool tracked = false;
  for (const auto& t : inputs) tracked = tracked || (t.defined() && t.tracked());
  if (!tracked) return false;
  tape->record(std::move(inputs), out, std::move(backward));
  return true;
}

Tensor Gradients::of(const Tensor& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor::zeros(t.shape());
  return Tensor(t.shape(), it->second);
}

Gradients backward(const GradTape& tape, const Tensor& scalar_output) {
  if (scalar_output.numel() != 1) {
    throw ShapeError("backward requires a single-element output, got shape " +
                     shape_str(scalar_output.shape()));
  }
  if (!tape.produced(scalar_output)) {
    throw Error("backward: output tensor was not recorded on this tape");
  }
  Gradients result;
  auto& grads = result.raw();
  grads[scalar_output.id()] = std::vector<Real>{1.0};

  const auto& nodes = tape.nodes();
  for (std::size_t k = nodes.size(); k-- > 0;) {
    const auto& node = nodes[k];
    auto it = grads.find(node.output.id());
    if (it == grads.end()) continue;
    std::vector<Real> gout;
    if (node.output.requires_grad()) {
      gout = it->second;
    } else {
      // Intermediate gradients are consumed exactly once; leaves stay.
      gout = std::move(it->second);
      grads.erase(it);
    }
    GradRefs refs(node.inputs.size(), nullptr);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const Tensor& in = node.inputs[i];
      if (!in.defined() || !in.tracked()) continue;
      auto& buf = grads[in.id()];
      if (buf.empty()) buf.assign(in.numel(), 0.0);
      refs[i] = &buf;
    }
    node.backward(gout, refs);
  }
  return result;
}

}  // namespace fmamba
