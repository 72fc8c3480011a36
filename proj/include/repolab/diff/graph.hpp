#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "repolab/diff/tensor.hpp"

namespace repolab::diff {

enum class OpKind : std::uint8_t {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  AddRow,
  Scale,
  AddScalar,
  Exp,
  Log,
  Sqrt,
  Square,
  Tanh,
  Sigmoid,
  Relu,
  Gelu,
  Clamp,
  MatMul,
  MatMulNT,
  Transpose,
  Reshape,
  Sum,
  Mean,
  RowSum,
  LayerNorm,
  Softmax,
  LogSoftmax,
  GatherRows,
  Pick,
  SliceRows,
  SliceCols,
  ConcatRows,
  ConcatCols,
  Grl,
};

class Graph;

// Handle to a node. Cheap to copy; only valid while its graph is alive.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
};

// Tape of operations in creation order. Creation order is a topological
// order, so backward is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Populates gradients of every node reachable from `seed` that requires a
  // gradient. Previous gradients are discarded. Throws NonScalarSeed.
  void backward(Var seed);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Zero tensor of matching shape when the node received no gradient.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  OpKind op(Var v) const { return nodes_[v.id].op; }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Used by operation implementations.
  Var emit(OpKind op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var emit(OpKind op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  // Gradient accumulator for node `id`, allocated as zeros on first use.
  Tensor& grad_acc(std::uint32_t id);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor value;
    Tensor grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  mutable Tensor empty_grad_;
};

// ---- elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
// a[N, M] + b[M] broadcast over rows.
Var add_row(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double constant);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
// tanh approximation, as in GPT-2.
Var gelu(Var a);
// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);

// ---- linear algebra ----
Var matmul(Var a, Var b);     // [N,K] x [K,M]
Var matmul_nt(Var a, Var b);  // [N,K] x [M,K]^T
Var transpose(Var a);
Var reshape(Var a, Shape shape);

// ---- reductions ----
Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);  // [N,M] -> [N]

// ---- normalisation and softmax family (over the last axis) ----
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax(Var z);
Var log_softmax(Var z);

// ---- indexing ----
Var gather_rows(Var table, std::span<const int> ids);
// out[i] = a[i, index[i]]
Var pick(Var a, std::span<const int> index);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// Gradient reversal: identity forward; backward multiplies by -lambda.
Var grl(Var x, double lambda = 1.0);

// ---- composites (built only from the operations above) ----
// Per-row KL(softmax(p) || softmax(q)); shape [rows].
Var kl_from_logits(Var p_logits, Var q_logits);
// Elementwise -d ln q - (1-d) ln(1-q) with q clamped to [eps, 1-eps].
Var bce(Var q, std::span<const double> labels, double eps = 1e-7);
// Per-row -log softmax(logits)[target]; shape [rows].
Var cross_entropy_rows(Var logits, std::span<const int> targets);
// Per-row cosine similarity of two [N, M] inputs; shape [N].
Var row_cosine(Var a, Var b, double eps = 1e-12);

}  // namespace repolab::diff
