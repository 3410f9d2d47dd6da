#include "rmt/tape.hpp"

#include "rmt/errors.hpp"

namespace rmt {

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || node(p).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(backward) : BackwardFn{}});
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw StateError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

void Tape::backward(Var loss) {
  const Node& l = node(loss);
  if (l.value.size() != 1) {
    throw DimensionError("backward needs a single-element loss, got " + shape_string(l.value.shape()));
  }
  for (Node& n : nodes_) n.grad_live = false;
  backward_done_ = true;
  if (!l.requires_grad) return;
  Tensor* seed = grad_buffer(loss);
  (*seed)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad_live && n.backward) n.backward(*this, i);
  }
}

const Tensor& Tape::grad(Var v) {
  const Node& n = node(v);
  if (!backward_done_) throw StateError("gradient requested before backward");
  if (!n.requires_grad) throw StateError("gradient requested for a variable that does not require one");
  // A parameter the loss never reached gets a zero gradient.
  return *grad_buffer(v);
}

const Tensor& Tape::output_grad(std::size_t id) const { return nodes_.at(id).grad; }

Tensor* Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (!n.grad_live) {
    if (n.grad.shape() == n.value.shape()) {
      n.grad.fill(0.0);
    } else {
      n.grad = Tensor(n.value.shape(), 0.0);
    }
    n.grad_live = true;
  }
  return &n.grad;
}

}  // namespace rmt
