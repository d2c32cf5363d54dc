#pragma once

// Reverse-mode automatic differentiation whose backward pass is itself
// recorded on the graph. Every adjoint is built from the same primitive
// set, so a gradient returned with create_graph=true can be differentiated
// again (needed for the parameter gradient of a Jacobian norm).

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "jens/tensor.hpp"

namespace jens::ad {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kMatMul,
  kBiasAdd,
  kChannelSum,
  kChannelBroadcast,
  kRelu,
  kReluMask,
  kSquare,
  kSum,
  kMean,
  kFill,
  kLogSoftmax,
  kExp,
  kLog,
  kReciprocal,
  kGatherRow,
  kScatterRow,
  kReshape,
  kConv2d,
  kConv2dInputGrad,
  kConv2dKernelGrad,
  kAvgPool2d,
  kAvgPool2dGrad,
  kRowSum,
  kRowBroadcast,
  kSlice0,
  kPad0,
  kConcat0,
};

const char* op_name(OpKind op);

struct OpAttrs {
  double scalar = 0.0;
  bool trans_a = false;
  bool trans_b = false;
  Shape shape;                       // target shape (fill, reshape, broadcast, conv grads)
  std::vector<std::size_t> indices;  // gather/scatter rows
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct Node {
  OpKind op = OpKind::kLeaf;
  std::vector<std::size_t> inputs;
  OpAttrs attrs;
  Tensor value;
};

class Graph;

// Handle to a node. Only valid while its Graph is alive and not truncated
// below the node.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only op record. Single writer; not copyable or movable because
// Vars hold its address.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }

  // Appends an op node, evaluating it eagerly.
  Var apply(OpKind op, std::span<const Var> inputs, OpAttrs attrs = {});

  // Replay support: overwrite a leaf value, then recompute every op node in
  // append order.
  void set_leaf_value(Var leaf, Tensor value);
  void replay();

  void truncate(std::size_t size);

 private:
  std::deque<Node> nodes_;
};

// --- primitives -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
// op(A) · op(B) for rank-2 operands, op = transpose when the flag is set.
Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);
// a: [N, C, ...], bias: [C]; added along axis 1.
Var bias_add(Var a, Var bias);
Var channel_sum(Var a);
Var channel_broadcast(Var v, Shape shape);
Var relu(Var a);
// 1 where a > 0, else 0. Has no adjoint.
Var relu_mask(Var a);
Var square(Var a);
Var sum(Var a);
Var mean(Var a);
Var fill(Var scalar, Shape shape);
Var log_softmax(Var a);  // row-wise over [B, C]
Var exp(Var a);
Var log(Var a);
Var reciprocal(Var a);
// out[i] = a[i, indices[i]]
Var gather_row(Var a, std::vector<std::size_t> indices);
// out[i, indices[i]] = g[i], zero elsewhere; out is [B, cols].
Var scatter_row(Var g, std::vector<std::size_t> indices, std::size_t cols);
Var reshape(Var a, Shape shape);
Var flatten(Var a);  // [N, ...] -> [N, prod(...)]
// Valid cross-correlation, stride 1. x: [N, Cin, H, W], k: [Cout, Cin, kh, kw].
Var conv2d(Var x, Var k);
Var conv2d_input_grad(Var g, Var k, std::size_t height, std::size_t width);
Var conv2d_kernel_grad(Var x, Var g, std::size_t kh, std::size_t kw);
Var avgpool2d(Var x);  // 2x2 window, stride 2
Var avgpool2d_grad(Var g);
Var row_sum(Var a);                        // [B, C] -> [B]
Var row_broadcast(Var v, std::size_t cols);  // [B] -> [B, cols]
Var slice0(Var a, std::size_t begin, std::size_t end);
Var pad0(Var a, std::size_t begin, std::size_t total);
Var concat0(std::span<const Var> parts);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// --- differentiation ------------------------------------------------------

// Gradients of a scalar output with respect to chosen nodes. When built
// with create_graph, each entry also carries its graph node.
class GradMap {
 public:
  struct Entry {
    Tensor value;
    std::optional<Var> node;
  };

  const Entry& at(Var leaf) const;
  const Tensor& value(Var leaf) const { return at(leaf).value; }
  Var node(Var leaf) const;
  bool contains(Var leaf) const { return entries_.contains(leaf.id()); }
  std::size_t size() const { return entries_.size(); }

  void insert(Var leaf, Entry entry);

 private:
  std::unordered_map<std::size_t, Entry> entries_;
};

// Leaves the output does not depend on receive a zero gradient.
GradMap backward(Var output, std::span<const Var> leaves, bool create_graph);

// Graph-attached gradients, in the order of wrt.
std::vector<Var> grad(Var output, std::span<const Var> wrt);

// Detached gradient values; the graph is restored to its prior size.
std::vector<Tensor> grad_values(Var output, std::span<const Var> wrt);

// For logits [B, C] computed row-independently from x [B, D], returns C
// graph-attached tensors; entry p holds d logits[i, p] / d x[i, :] for every
// row i.
std::vector<Var> jacobian_rows(Var logits, Var x);

// Sum of squared entries.
Var frob_sq(Var j);

}  // namespace jens::ad
