#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "clinembed/tensor.hpp"

namespace clinembed {

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  ScalarMul,
  Mul,
  Concat,
  Slice,
  Gather,
  Sum,
  Mean,
  Max,
  Softmax,
  LogSoftmax,
  LayerNorm,
  Relu,
  Gelu,
  Sigmoid,
  Transpose,
  Reshape,
};

std::string_view op_name(OpKind kind);

/// Restricts which entries of each softmax row take part in normalisation.
/// Excluded entries produce exactly 0 and receive no gradient.
struct SoftmaxMask {
  /// Entry (q, c) of each trailing L x L block is kept only when c <= q.
  bool causal = false;
  /// For 3-D input [B x L x K]: batch b keeps columns c < key_lengths[b].
  std::vector<std::size_t> key_lengths;
  /// One [begin, end) column window per flattened row.
  std::vector<std::pair<std::size_t, std::size_t>> row_ranges;

  bool empty() const { return !causal && key_lengths.empty() && row_ranges.empty(); }
};

struct OpAttrs {
  double scalar = 0.0;
  std::size_t axis = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> indices;
  Shape shape;
  SoftmaxMask mask;
};

inline constexpr double kLayerNormEpsilon = 1e-5;

/// One recorded operation. `saved` and `saved_index` hold whatever the
/// backward rule of `kind` needs (normalised activations, argmax positions).
struct Node {
  OpKind kind = OpKind::Leaf;
  std::vector<std::size_t> inputs;
  Tensor value;
  bool requires_grad = false;
  OpAttrs attrs;
  std::vector<double> saved;
  std::vector<std::size_t> saved_index;
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic computation graph. Nodes are appended in evaluation order, so
/// insertion order is a topological order and backward walks it in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Evaluates `kind` on `inputs` and records the result.
  /// Throws ShapeError on non-conforming inputs and NumericError when the
  /// output contains NaN or Inf.
  Var apply(OpKind kind, std::span<const Var> inputs, OpAttrs attrs = {});

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

 private:
  std::deque<Node> nodes_;  // stable addresses: Var::value() references survive growth
};

/// Gradients of a scalar loss, keyed by node id.
class GradientMap {
 public:
  void set(std::size_t id, Tensor grad) { grads_[id] = std::move(grad); }
  bool contains(Var v) const { return grads_.count(v.id()) != 0; }
  const Tensor& at(Var v) const;
  const Tensor& at(std::size_t id) const;
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  std::map<std::size_t, Tensor> grads_;
};

/// Reverse-mode sweep from `loss`, which must hold exactly one element.
/// Every leaf with requires_grad receives an entry (zeros if unreachable).
GradientMap backward(const Tape& tape, Var loss);

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var gather(Var table, std::vector<std::size_t> rows);
Var sum(Var a, std::size_t axis);
Var sum_all(Var a);
Var mean(Var a, std::size_t axis);
Var mean_all(Var a);
/// Max over `axis`; ties resolve to the lowest index.
Var max(Var a, std::size_t axis);
Var softmax(Var a, SoftmaxMask mask = {});
Var log_softmax(Var a, SoftmaxMask mask = {});
Var layer_norm(Var x, Var gain, Var shift);
Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

/// Builds a scalar loss from leaves placed on a fresh tape.
using GraphBuilder = std::function<Var(Tape&, std::span<const Var>)>;

/// Largest |analytic - central difference| / max(1, |analytic|, |numeric|)
/// over every entry of every leaf.
double grad_check(const GraphBuilder& f, const std::vector<Tensor>& leaves, double h = 1e-5);

}  // namespace clinembed
