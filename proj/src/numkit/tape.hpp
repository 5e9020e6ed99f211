#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "numkit/tensor.hpp"

namespace shapguard::numkit {

/// Handle to a node on a Tape.
struct Value {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Reverse-mode autodiff tape over Tensor-valued nodes. Nodes are
/// appended in creation order, which is also a valid topological order,
/// so backward is a single reverse sweep. Gradients accumulate
/// additively into per-node adjoint buffers.
///
/// A tape is confined to one worker and is typically built, swept and
/// discarded once per training step.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Node that never receives gradient (inputs, masks, fixed weights).
  Value constant(Tensor v);
  /// Leaf parameter; gradient available after backward.
  Value param(Tensor v);

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);  // elementwise
  Value matmul(Value a, Value b);
  /// x*w + bias (bias broadcast over rows).
  Value affine(Value x, Value w, Value bias);
  /// x*w + h*u + bias, the fused LSTM gate pre-activation.
  Value affine(Value x, Value w, Value h, Value u, Value bias);

  Value sigmoid(Value a);
  Value tanh_(Value a);
  Value relu(Value a);
  Value log_(Value a);  // strictly positive input
  Value abs_(Value a);
  Value neg(Value a);
  Value scale(Value a, double s);
  Value add_scalar(Value a, double s);

  Value sum(Value a);   // -> scalar
  Value mean(Value a);  // -> scalar
  /// Row-wise sum of a rank-2 tensor, m x n -> m.
  Value sum_rows(Value a);
  /// Softmax-like row normalization: p_ij = a_ij / sum_j a_ij.
  /// Entries must be strictly positive.
  Value normalize_rows(Value a);

  Value concat_rows(Value a, Value b);
  Value slice_rows(Value a, std::size_t begin, std::size_t end);
  Value reshape(Value a, std::vector<std::size_t> shape);

  /// Reverse sweep from a scalar loss. Seeds d(loss)/d(loss) = 1.
  /// Calling twice without reset_gradients() is an error.
  void backward(Value loss);
  /// Clears all adjoints and re-arms backward.
  void reset_gradients();

  const Tensor& value(Value v) const;
  /// Adjoint of a gradient-enabled node after backward. Leaves never
  /// reached by the sweep report a zero tensor of their shape.
  const Tensor& gradient(Value v);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

 private:
  using BackFn = std::function<void(Tape&, std::uint32_t self, const Tensor& adj)>;

  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackFn backprop;  // empty for leaves and constants
  };

  Value push(Tensor v, bool requires_grad, BackFn fn);
  bool needs(Value v) const { return nodes_[v.id].requires_grad; }
  void check(Value v) const;
  /// Mutable adjoint buffer for a node, zero-initialized on first use.
  Tensor& adj_buffer(std::uint32_t id);

  std::vector<Node> nodes_;
  std::vector<Tensor> adjoints_;
  bool consumed_ = false;
};

}  // namespace shapguard::numkit
