#include "repolab/diff/graph.hpp"

#include "repolab/util/error.hpp"

namespace repolab::diff {

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }

Var Graph::leaf(Tensor value) {
  Node node;
  node.op = OpKind::Leaf;
  node.requires_grad = true;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node node;
  node.op = OpKind::Constant;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::emit(OpKind op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return emit(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Graph::emit(OpKind op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.graph != this) throw Error(ErrorKind::ShapeMismatch, "operands belong to different graphs");
    node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
  }
  // Nodes that cannot reach a leaf keep no closure, so constant-only
  // forward passes cost no more than plain evaluation.
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_acc(std::uint32_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor::zeros_like(node.value);
    node.has_grad = true;
  }
  return node.grad;
}

const Tensor& Graph::grad(Var v) const {
  const Node& node = nodes_[v.id];
  if (node.has_grad) return node.grad;
  empty_grad_ = Tensor::zeros_like(node.value);
  return empty_grad_;
}

void Graph::backward(Var seed) {
  if (seed.graph != this) throw Error(ErrorKind::NonScalarSeed, "seed belongs to another graph");
  if (!nodes_[seed.id].value.is_scalar()) {
    throw Error(ErrorKind::NonScalarSeed, "seed has shape " + shape_string(nodes_[seed.id].value.shape()));
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  if (!nodes_[seed.id].requires_grad) return;
  grad_acc(seed.id).fill(1.0);
  for (std::uint32_t id = seed.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

}  // namespace repolab::diff
