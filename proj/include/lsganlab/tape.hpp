#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "lsganlab/tensor.hpp"

namespace lsgan {

using NodeId = std::size_t;

enum class Op : std::uint8_t {
  Leaf,
  Add,        // same shape, or [m,n] + [n] bias broadcast over the batch axis
  Sub,
  Mul,
  Div,
  MatMul,
  Transpose,
  Scale,      // x * attr
  AddScalar,  // x + attr
  Square,
  Sqrt,
  Exp,
  Log,
  Sigmoid,
  Tanh,
  Relu,
  LeakyRelu,  // slope in attr
  LeakyStep,  // 1 where x > 0 else attr; piecewise constant, carries no gradient
  Sum,        // all elements -> [1]
  Mean,       // all elements -> [1]
  SumRows,    // [m,n] -> [n]
  BroadcastRows,    // [n] -> [attr_rows, n]
  BroadcastScalar,  // [1] -> arbitrary shape
};

const char* op_name(Op op);

/// Per-parameter gradients keyed by the parameter's leaf node id.
/// Iteration order is deterministic (ascending node id).
class Gradients {
 public:
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  const Tensor& at(NodeId id) const;
  void set(NodeId id, Tensor grad) { grads_[id] = std::move(grad); }

  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::map<NodeId, Tensor> grads_;
};

/// Append-only record of primitive ops. Building a graph evaluates it
/// immediately (define-by-run); `backward` then walks the record in reverse.
///
/// The reverse pass is itself recorded as ordinary ops, so gradients are
/// tape values and can be differentiated again. gan::gradient_penalty relies
/// on this to push a gradient-norm term through a second backward.
///
/// Every forward op validates its output for NaN/Inf and throws NumericError
/// instead of letting bad values propagate. Single-threaded per tape;
/// distinct tapes are independent.
class Tape {
 public:
  struct Node {
    Op op = Op::Leaf;
    std::array<NodeId, 2> inputs{0, 0};
    std::uint8_t n_inputs = 0;
    double attr = 0.0;
    std::size_t rows_attr = 0;
    Tensor value;
    bool requires_grad = false;
    bool is_param = false;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves. `constant` never receives gradients; `parameter` is what
  // `backward` reports on; `input` participates in differentiation without
  // being a parameter (used for gradients w.r.t. data).
  NodeId constant(Tensor value);
  NodeId parameter(Tensor value);
  NodeId input(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId scale(NodeId a, double factor);
  NodeId add_scalar(NodeId a, double addend);
  NodeId square(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  NodeId relu(NodeId a);
  NodeId leaky_relu(NodeId a, double slope);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId sum_rows(NodeId a);
  NodeId broadcast_rows(NodeId a, std::size_t rows);
  NodeId broadcast_scalar(NodeId a, Shape shape);

  /// Copies a value out of the graph: the result is a fresh constant, so
  /// backward does not flow past it.
  NodeId detach(NodeId a);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Node& node(NodeId id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }
  bool requires_grad(NodeId id) const { return nodes_[id].requires_grad; }

  /// d(loss)/d(p) for every parameter leaf, by reverse accumulation.
  /// Parameters the loss does not reach get zero gradients. The loss node
  /// must hold exactly one element.
  Gradients backward(NodeId loss);

  /// Records the reverse pass on the tape and returns one gradient node per
  /// requested id (zero-constant where the loss does not reach it). This is
  /// the differentiable form of `backward`.
  std::vector<NodeId> gradient_nodes(NodeId loss, std::span<const NodeId> wrt);

 private:
  NodeId push(Node node);
  NodeId unary(Op op, NodeId a, double attr = 0.0);
  NodeId binary(Op op, NodeId a, NodeId b);
  NodeId leaky_step(NodeId a, double slope);

  std::vector<Node> nodes_;
};

/// Max over all parameter entries of
///   |analytic - central difference| / max(1, |analytic|, |numeric|).
/// `f` must build and return a scalar node from the given parameter leaves.
/// Throws NumericError (with the probe location) if `f` is non-finite at a
/// perturbed point.
double grad_check(const std::function<NodeId(Tape&, std::span<const NodeId>)>& f,
                  std::span<const Tensor> params, double step);

}  // namespace lsgan
