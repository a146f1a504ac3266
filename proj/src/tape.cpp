#include "lsganlab/tape.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <utility>

namespace lsgan {

namespace {

using MatrixMap =
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatrixMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

double sigmoid_scalar(double x) {
  // Split on sign to avoid overflow in exp for large |x|.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::LeakyStep: return "leaky_step";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::SumRows: return "sum_rows";
    case Op::BroadcastRows: return "broadcast_rows";
    case Op::BroadcastScalar: return "broadcast_scalar";
  }
  return "?";
}

const Tensor& Gradients::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    throw ValueError("no gradient recorded for node " + std::to_string(id));
  }
  return it->second;
}

NodeId Tape::push(Node node) {
  if (!node.value.all_finite()) {
    throw NumericError(std::string("non-finite result from op '") + op_name(node.op) + "'");
  }
  nodes_.push_back(std::move(node));
  return nodes_.size() - 1;
}

NodeId Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_param = true;
  return push(std::move(n));
}

NodeId Tape::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

NodeId Tape::unary(Op op, NodeId a, double attr) {
  const Tensor& x = nodes_[a].value;
  Tensor out(x.shape());
  const double* src = x.data();
  double* dst = out.data();
  const std::size_t n = x.numel();
  switch (op) {
    case Op::Scale:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * attr;
      break;
    case Op::AddScalar:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] + attr;
      break;
    case Op::Square:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] * src[i];
      break;
    case Op::Sqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (src[i] < 0.0) throw ValueError("sqrt of negative value");
        dst[i] = std::sqrt(src[i]);
      }
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::exp(src[i]);
      break;
    case Op::Log:
      for (std::size_t i = 0; i < n; ++i) {
        if (src[i] <= 0.0) throw ValueError("log of non-positive value");
        dst[i] = std::log(src[i]);
      }
      break;
    case Op::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) dst[i] = sigmoid_scalar(src[i]);
      break;
    case Op::Tanh:
      for (std::size_t i = 0; i < n; ++i) dst[i] = std::tanh(src[i]);
      break;
    case Op::Relu:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
      break;
    case Op::LeakyRelu:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0 ? src[i] : attr * src[i];
      break;
    case Op::LeakyStep:
      for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > 0.0 ? 1.0 : attr;
      break;
    default:
      throw Error("unary() called with non-unary op");
  }
  Node node;
  node.op = op;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.attr = attr;
  node.value = std::move(out);
  // A step mask is piecewise constant: treat it as gradient-free.
  node.requires_grad = op == Op::LeakyStep ? false : nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::binary(Op op, NodeId a, NodeId b) {
  const Tensor& x = nodes_[a].value;
  const Tensor& y = nodes_[b].value;
  Tensor out;
  switch (op) {
    case Op::Add: {
      if (x.same_shape(y)) {
        out = Tensor(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
      } else if (x.rank() == 2 && y.rank() == 1 && x.cols() == y.shape()[0]) {
        // bias broadcast over the batch axis
        out = Tensor(x.shape());
        const std::size_t m = x.rows(), n = x.cols();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[r * n + c] + y[c];
      } else {
        throw ShapeError("add: incompatible shapes " + shape_to_string(x.shape()) + " and " +
                         shape_to_string(y.shape()));
      }
      break;
    }
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      if (!x.same_shape(y)) {
        throw ShapeError(std::string(op_name(op)) + ": shape mismatch " +
                         shape_to_string(x.shape()) + " vs " + shape_to_string(y.shape()));
      }
      out = Tensor(x.shape());
      if (op == Op::Sub) {
        for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] - y[i];
      } else if (op == Op::Mul) {
        for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
      } else {
        for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] / y[i];
      }
      break;
    }
    case Op::MatMul: {
      if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(x.shape()) + " and " +
                         shape_to_string(y.shape()));
      }
      out = Tensor({x.rows(), y.cols()});
      ConstMatrixMap ma(x.data(), static_cast<Eigen::Index>(x.rows()),
                        static_cast<Eigen::Index>(x.cols()));
      ConstMatrixMap mb(y.data(), static_cast<Eigen::Index>(y.rows()),
                        static_cast<Eigen::Index>(y.cols()));
      MatrixMap mc(out.data(), static_cast<Eigen::Index>(x.rows()),
                   static_cast<Eigen::Index>(y.cols()));
      mc.noalias() = ma * mb;
      break;
    }
    default:
      throw Error("binary() called with non-binary op");
  }
  Node node;
  node.op = op;
  node.inputs = {a, b};
  node.n_inputs = 2;
  node.value = std::move(out);
  node.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
  return push(std::move(node));
}

NodeId Tape::add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
NodeId Tape::sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
NodeId Tape::mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
NodeId Tape::div(NodeId a, NodeId b) { return binary(Op::Div, a, b); }
NodeId Tape::matmul(NodeId a, NodeId b) { return binary(Op::MatMul, a, b); }

NodeId Tape::transpose(NodeId a) {
  const Tensor& x = nodes_[a].value;
  if (x.rank() != 2) {
    throw ShapeError("transpose: expected rank-2 tensor, got " + shape_to_string(x.shape()));
  }
  Tensor out({x.cols(), x.rows()});
  const std::size_t m = x.rows(), n = x.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = x[r * n + c];
  Node node;
  node.op = Op::Transpose;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.value = std::move(out);
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::scale(NodeId a, double factor) { return unary(Op::Scale, a, factor); }
NodeId Tape::add_scalar(NodeId a, double addend) { return unary(Op::AddScalar, a, addend); }
NodeId Tape::square(NodeId a) { return unary(Op::Square, a); }
NodeId Tape::sqrt(NodeId a) { return unary(Op::Sqrt, a); }
NodeId Tape::exp(NodeId a) { return unary(Op::Exp, a); }
NodeId Tape::log(NodeId a) { return unary(Op::Log, a); }
NodeId Tape::sigmoid(NodeId a) { return unary(Op::Sigmoid, a); }
NodeId Tape::tanh(NodeId a) { return unary(Op::Tanh, a); }
NodeId Tape::relu(NodeId a) { return unary(Op::Relu, a); }
NodeId Tape::leaky_relu(NodeId a, double slope) { return unary(Op::LeakyRelu, a, slope); }
NodeId Tape::leaky_step(NodeId a, double slope) { return unary(Op::LeakyStep, a, slope); }

NodeId Tape::sum(NodeId a) {
  const Tensor& x = nodes_[a].value;
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  Node node;
  node.op = Op::Sum;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.value = Tensor::scalar(s);
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::mean(NodeId a) {
  const Tensor& x = nodes_[a].value;
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i];
  Node node;
  node.op = Op::Mean;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.value = Tensor::scalar(s / static_cast<double>(x.numel()));
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::sum_rows(NodeId a) {
  const Tensor& x = nodes_[a].value;
  if (x.rank() != 2) {
    throw ShapeError("sum_rows: expected rank-2 tensor, got " + shape_to_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += x[r * n + c];
  Node node;
  node.op = Op::SumRows;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.value = std::move(out);
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::broadcast_rows(NodeId a, std::size_t rows) {
  const Tensor& x = nodes_[a].value;
  if (x.rank() != 1) {
    throw ShapeError("broadcast_rows: expected rank-1 tensor, got " + shape_to_string(x.shape()));
  }
  const std::size_t n = x.shape()[0];
  Tensor out({rows, n});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x[c];
  Node node;
  node.op = Op::BroadcastRows;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.rows_attr = rows;
  node.value = std::move(out);
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::broadcast_scalar(NodeId a, Shape shape) {
  const Tensor& x = nodes_[a].value;
  if (!x.is_scalar()) {
    throw ShapeError("broadcast_scalar: expected one element, got " +
                     shape_to_string(x.shape()));
  }
  Node node;
  node.op = Op::BroadcastScalar;
  node.inputs = {a, 0};
  node.n_inputs = 1;
  node.value = Tensor::full(std::move(shape), x[0]);
  node.requires_grad = nodes_[a].requires_grad;
  return push(std::move(node));
}

NodeId Tape::detach(NodeId a) { return constant(nodes_[a].value); }

std::vector<NodeId> Tape::gradient_nodes(NodeId loss, std::span<const NodeId> wrt) {
  if (loss >= nodes_.size()) throw ValueError("gradient_nodes: bad loss node id");
  if (!nodes_[loss].value.is_scalar()) {
    throw ShapeError("backward requires a scalar loss; got shape " +
                     shape_to_string(nodes_[loss].value.shape()));
  }

  // adj[i] is the node holding d(loss)/d(node i), once known. The reverse
  // sweep only appends nodes with id > loss, so iterating down from loss is
  // safe while the tape grows.
  std::vector<std::optional<NodeId>> adj(loss + 1);
  adj[loss] = constant(Tensor::scalar(1.0));

  auto accumulate = [&](NodeId target, NodeId contribution) {
    if (!nodes_[target].requires_grad) return;
    if (adj[target]) {
      adj[target] = add(*adj[target], contribution);
    } else {
      adj[target] = contribution;
    }
  };

  for (NodeId id = loss + 1; id-- > 0;) {
    if (!adj[id] || !nodes_[id].requires_grad) continue;
    const Node& n = nodes_[id];
    const NodeId g = *adj[id];
    const NodeId a = n.inputs[0];
    const NodeId b = n.inputs[1];
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::Add: {
        accumulate(a, g);
        const Tensor& xa = nodes_[a].value;
        const Tensor& xb = nodes_[b].value;
        if (xa.same_shape(xb)) {
          accumulate(b, g);
        } else {
          accumulate(b, sum_rows(g));  // bias broadcast case
        }
        break;
      }
      case Op::Sub:
        accumulate(a, g);
        accumulate(b, scale(g, -1.0));
        break;
      case Op::Mul:
        accumulate(a, mul(g, b));
        accumulate(b, mul(g, a));
        break;
      case Op::Div:
        accumulate(a, div(g, b));
        accumulate(b, scale(mul(g, div(id, b)), -1.0));  // d(a/b)/db = -(a/b)/b
        break;
      case Op::MatMul:
        accumulate(a, matmul(g, transpose(b)));
        accumulate(b, matmul(transpose(a), g));
        break;
      case Op::Transpose:
        accumulate(a, transpose(g));
        break;
      case Op::Scale:
        accumulate(a, scale(g, n.attr));
        break;
      case Op::AddScalar:
        accumulate(a, g);
        break;
      case Op::Square:
        accumulate(a, scale(mul(g, a), 2.0));
        break;
      case Op::Sqrt:
        accumulate(a, div(scale(g, 0.5), id));
        break;
      case Op::Exp:
        accumulate(a, mul(g, id));
        break;
      case Op::Log:
        accumulate(a, div(g, a));
        break;
      case Op::Sigmoid:
        // sigma' = sigma (1 - sigma)
        accumulate(a, mul(g, mul(id, add_scalar(scale(id, -1.0), 1.0))));
        break;
      case Op::Tanh:
        accumulate(a, mul(g, add_scalar(scale(square(id), -1.0), 1.0)));
        break;
      case Op::Relu:
        accumulate(a, mul(g, leaky_step(a, 0.0)));
        break;
      case Op::LeakyRelu:
        accumulate(a, mul(g, leaky_step(a, n.attr)));
        break;
      case Op::LeakyStep:
        break;
      case Op::Sum:
        accumulate(a, broadcast_scalar(g, nodes_[a].value.shape()));
        break;
      case Op::Mean:
        accumulate(a, scale(broadcast_scalar(g, nodes_[a].value.shape()),
                            1.0 / static_cast<double>(nodes_[a].value.numel())));
        break;
      case Op::SumRows:
        accumulate(a, broadcast_rows(g, nodes_[a].value.rows()));
        break;
      case Op::BroadcastRows:
        accumulate(a, sum_rows(g));
        break;
      case Op::BroadcastScalar:
        accumulate(a, sum(g));
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (w <= loss && adj[w]) {
      out.push_back(*adj[w]);
    } else {
      out.push_back(constant(Tensor(nodes_[w].value.shape())));
    }
  }
  return out;
}

Gradients Tape::backward(NodeId loss) {
  std::vector<NodeId> params;
  for (NodeId id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].is_param) params.push_back(id);
  }
  std::vector<NodeId> grad_ids = gradient_nodes(loss, params);
  Gradients grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.set(params[i], nodes_[grad_ids[i]].value);
  }
  return grads;
}

double grad_check(const std::function<NodeId(Tape&, std::span<const NodeId>)>& f,
                  std::span<const Tensor> params, double step) {
  if (step <= 0.0) throw ValueError("grad_check: step must be positive");

  auto eval = [&](std::span<const Tensor> p) {
    Tape tape;
    std::vector<NodeId> ids;
    ids.reserve(p.size());
    for (const Tensor& t : p) ids.push_back(tape.parameter(t));
    NodeId loss = f(tape, ids);
    return tape.value(loss).item();
  };

  // Analytic gradients once.
  Tape tape;
  std::vector<NodeId> ids;
  for (const Tensor& t : params) ids.push_back(tape.parameter(t));
  NodeId loss = f(tape, ids);
  Gradients grads = tape.backward(loss);

  std::vector<Tensor> probe(params.begin(), params.end());
  double max_err = 0.0;
  for (std::size_t pi = 0; pi < probe.size(); ++pi) {
    const Tensor& analytic = grads.at(ids[pi]);
    for (std::size_t k = 0; k < probe[pi].numel(); ++k) {
      const double saved = probe[pi][k];
      double f_plus = 0.0, f_minus = 0.0;
      try {
        probe[pi][k] = saved + step;
        f_plus = eval(probe);
        probe[pi][k] = saved - step;
        f_minus = eval(probe);
      } catch (const Error&) {
        probe[pi][k] = saved;
        throw NumericError("grad_check: non-finite value at param " + std::to_string(pi) +
                           " entry " + std::to_string(k));
      }
      probe[pi][k] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
        throw NumericError("grad_check: non-finite value at param " + std::to_string(pi) +
                           " entry " + std::to_string(k));
      }
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[k];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(a - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace lsgan
