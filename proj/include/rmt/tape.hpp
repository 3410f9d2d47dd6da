#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "rmt/tensor.hpp"

namespace rmt {

// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

// Ordered record of primitive operations for reverse-mode differentiation of
// a scalar loss. A tape belongs to one forward/backward pass on one thread.
//
// Gradients are only propagated into nodes that depend on a registered
// parameter, so the gradient of a given parameter does not depend on which
// other parameters are registered.
class Tape {
 public:
  // Called during backward with the tape and the id of the node whose output
  // gradient is available through output_grad(). Must accumulate into parents.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor value);
  Var parameter(Tensor value);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Runs the reverse sweep from a single-element loss. May be called again
  // with a different loss on the same tape; gradients are reset first.
  void backward(Var loss);

  // Gradient of the last backward loss with respect to v. Throws StateError if
  // backward has not run or v does not require a gradient.
  const Tensor& grad(Var v);

  // For BackwardFn implementations.
  const Tensor& output_grad(std::size_t node) const;
  // Zero-initialized accumulation buffer for v, or nullptr when v needs no gradient.
  Tensor* grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_live = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace rmt
