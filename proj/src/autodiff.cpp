#include "jens/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

#include "kernels.hpp"

namespace jens::ad {
namespace {

Tensor evaluate(OpKind op, const std::vector<Tensor>& in, const OpAttrs& at) {
  namespace k = kernels;
  switch (op) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      break;
    case OpKind::kAdd: return k::add(in[0], in[1]);
    case OpKind::kSub: return k::sub(in[0], in[1]);
    case OpKind::kMul: return k::mul(in[0], in[1]);
    case OpKind::kScale: return k::scale(in[0], at.scalar);
    case OpKind::kMatMul: return k::matmul(in[0], in[1], at.trans_a, at.trans_b);
    case OpKind::kBiasAdd: return k::bias_add(in[0], in[1]);
    case OpKind::kChannelSum: return k::channel_sum(in[0]);
    case OpKind::kChannelBroadcast: return k::channel_broadcast(in[0], at.shape);
    case OpKind::kRelu: return k::relu(in[0]);
    case OpKind::kReluMask: return k::relu_mask(in[0]);
    case OpKind::kSquare: return k::square(in[0]);
    case OpKind::kSum: return k::sum(in[0]);
    case OpKind::kMean: return k::mean(in[0]);
    case OpKind::kFill: return k::fill(in[0], at.shape);
    case OpKind::kLogSoftmax: return k::log_softmax(in[0]);
    case OpKind::kExp: return k::exp(in[0]);
    case OpKind::kLog: return k::log(in[0]);
    case OpKind::kReciprocal: return k::reciprocal(in[0]);
    case OpKind::kGatherRow: return k::gather_row(in[0], at.indices);
    case OpKind::kScatterRow: return k::scatter_row(in[0], at.indices, at.end);
    case OpKind::kReshape: return k::reshape(in[0], at.shape);
    case OpKind::kConv2d: return k::conv2d(in[0], in[1]);
    case OpKind::kConv2dInputGrad: return k::conv2d_input_grad(in[0], in[1], at.shape[0], at.shape[1]);
    case OpKind::kConv2dKernelGrad:
      return k::conv2d_kernel_grad(in[0], in[1], at.shape[0], at.shape[1]);
    case OpKind::kAvgPool2d: return k::avgpool2d(in[0]);
    case OpKind::kAvgPool2dGrad: return k::avgpool2d_grad(in[0]);
    case OpKind::kRowSum: return k::row_sum(in[0]);
    case OpKind::kRowBroadcast: return k::row_broadcast(in[0], at.end);
    case OpKind::kSlice0: return k::slice0(in[0], at.begin, at.end);
    case OpKind::kPad0: return k::pad0(in[0], at.begin, at.end);
    case OpKind::kConcat0: return k::concat0(in);
  }
  throw std::logic_error(std::string("evaluate: op without kernel: ") + op_name(op));
}

bool propagates(OpKind op) {
  return op != OpKind::kLeaf && op != OpKind::kConstant && op != OpKind::kReluMask;
}

Var var_of(Graph& g, std::size_t id) { return Var(&g, id); }

// Adjoints of node `id` with respect to each input, given the output
// adjoint `g`. Inputs that do not need a gradient get nullopt.
std::vector<std::optional<Var>> vjp(Graph& graph, std::size_t id, Var g,
                                    const std::unordered_map<std::size_t, char>& needs) {
  const Node& node = graph.node(id);
  const OpKind op = node.op;
  const OpAttrs at = node.attrs;
  const std::vector<std::size_t> ids = node.inputs;
  std::vector<Var> in;
  in.reserve(ids.size());
  for (auto i : ids) in.push_back(var_of(graph, i));
  const Var y = var_of(graph, id);
  std::vector<std::optional<Var>> out(ids.size());
  auto need = [&](std::size_t k) {
    auto it = needs.find(ids[k]);
    return it != needs.end() && it->second != 0;
  };

  switch (op) {
    case OpKind::kAdd:
      if (need(0)) out[0] = g;
      if (need(1)) out[1] = g;
      break;
    case OpKind::kSub:
      if (need(0)) out[0] = g;
      if (need(1)) out[1] = scale(g, -1.0);
      break;
    case OpKind::kMul:
      if (need(0)) out[0] = mul(g, in[1]);
      if (need(1)) out[1] = mul(g, in[0]);
      break;
    case OpKind::kScale:
      out[0] = scale(g, at.scalar);
      break;
    case OpKind::kMatMul: {
      const Var& a = in[0];
      const Var& b = in[1];
      if (!at.trans_a && !at.trans_b) {
        if (need(0)) out[0] = matmul(g, b, false, true);
        if (need(1)) out[1] = matmul(a, g, true, false);
      } else if (!at.trans_a && at.trans_b) {
        if (need(0)) out[0] = matmul(g, b, false, false);
        if (need(1)) out[1] = matmul(g, a, true, false);
      } else if (at.trans_a && !at.trans_b) {
        if (need(0)) out[0] = matmul(b, g, false, true);
        if (need(1)) out[1] = matmul(a, g, false, false);
      } else {
        if (need(0)) out[0] = matmul(b, g, true, true);
        if (need(1)) out[1] = matmul(g, a, true, true);
      }
      break;
    }
    case OpKind::kBiasAdd:
      if (need(0)) out[0] = g;
      if (need(1)) out[1] = channel_sum(g);
      break;
    case OpKind::kChannelSum:
      out[0] = channel_broadcast(g, in[0].shape());
      break;
    case OpKind::kChannelBroadcast:
      out[0] = channel_sum(g);
      break;
    case OpKind::kRelu:
      out[0] = mul(g, relu_mask(in[0]));
      break;
    case OpKind::kSquare:
      out[0] = mul(g, scale(in[0], 2.0));
      break;
    case OpKind::kSum:
      out[0] = fill(g, in[0].shape());
      break;
    case OpKind::kMean:
      out[0] = scale(fill(g, in[0].shape()), 1.0 / static_cast<double>(in[0].value().size()));
      break;
    case OpKind::kFill:
      out[0] = sum(g);
      break;
    case OpKind::kLogSoftmax: {
      const std::size_t cols = y.shape()[1];
      out[0] = sub(g, mul(exp(y), row_broadcast(row_sum(g), cols)));
      break;
    }
    case OpKind::kExp:
      out[0] = mul(g, y);
      break;
    case OpKind::kLog:
      out[0] = mul(g, reciprocal(in[0]));
      break;
    case OpKind::kReciprocal:
      out[0] = scale(mul(g, square(y)), -1.0);
      break;
    case OpKind::kGatherRow:
      out[0] = scatter_row(g, at.indices, in[0].shape()[1]);
      break;
    case OpKind::kScatterRow:
      out[0] = gather_row(g, at.indices);
      break;
    case OpKind::kReshape:
      out[0] = reshape(g, in[0].shape());
      break;
    case OpKind::kConv2d: {
      const auto& xs = in[0].shape();
      const auto& ks = in[1].shape();
      if (need(0)) out[0] = conv2d_input_grad(g, in[1], xs[2], xs[3]);
      if (need(1)) out[1] = conv2d_kernel_grad(in[0], g, ks[2], ks[3]);
      break;
    }
    case OpKind::kConv2dInputGrad: {
      const auto& ks = in[1].shape();
      if (need(0)) out[0] = conv2d(g, in[1]);
      if (need(1)) out[1] = conv2d_kernel_grad(g, in[0], ks[2], ks[3]);
      break;
    }
    case OpKind::kConv2dKernelGrad: {
      const auto& xs = in[0].shape();
      if (need(0)) out[0] = conv2d_input_grad(in[1], g, xs[2], xs[3]);
      if (need(1)) out[1] = conv2d(in[0], g);
      break;
    }
    case OpKind::kAvgPool2d:
      out[0] = avgpool2d_grad(g);
      break;
    case OpKind::kAvgPool2dGrad:
      out[0] = avgpool2d(g);
      break;
    case OpKind::kRowSum:
      out[0] = row_broadcast(g, in[0].shape()[1]);
      break;
    case OpKind::kRowBroadcast:
      out[0] = row_sum(g);
      break;
    case OpKind::kSlice0:
      out[0] = pad0(g, at.begin, in[0].shape()[0]);
      break;
    case OpKind::kPad0:
      out[0] = slice0(g, at.begin, at.begin + in[0].shape()[0]);
      break;
    case OpKind::kConcat0: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t rows = in[k].shape()[0];
        if (need(k)) out[k] = slice0(g, offset, offset + rows);
        offset += rows;
      }
      break;
    }
    case OpKind::kLeaf:
    case OpKind::kConstant:
    case OpKind::kReluMask:
      break;
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!need(k)) out[k].reset();
  }
  return out;
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kBiasAdd: return "bias_add";
    case OpKind::kChannelSum: return "channel_sum";
    case OpKind::kChannelBroadcast: return "channel_broadcast";
    case OpKind::kRelu: return "relu";
    case OpKind::kReluMask: return "relu_mask";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kFill: return "fill";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kReciprocal: return "reciprocal";
    case OpKind::kGatherRow: return "gather_row";
    case OpKind::kScatterRow: return "scatter_row";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConv2dInputGrad: return "conv2d_input_grad";
    case OpKind::kConv2dKernelGrad: return "conv2d_kernel_grad";
    case OpKind::kAvgPool2d: return "avgpool2d";
    case OpKind::kAvgPool2dGrad: return "avgpool2d_grad";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kRowBroadcast: return "row_broadcast";
    case OpKind::kSlice0: return "slice0";
    case OpKind::kPad0: return "pad0";
    case OpKind::kConcat0: return "concat0";
  }
  return "?";
}

const Tensor& Var::value() const { return graph_->node(id_).value; }

Var Graph::leaf(Tensor value) {
  require_finite(value, "leaf");
  nodes_.push_back(Node{OpKind::kLeaf, {}, {}, std::move(value)});
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  require_finite(value, "constant");
  nodes_.push_back(Node{OpKind::kConstant, {}, {}, std::move(value)});
  return Var(this, nodes_.size() - 1);
}

Var Graph::apply(OpKind op, std::span<const Var> inputs, OpAttrs attrs) {
  std::vector<std::size_t> ids;
  std::vector<Tensor> values;
  ids.reserve(inputs.size());
  values.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (&v.graph() != this) throw std::invalid_argument("op inputs belong to another graph");
    ids.push_back(v.id());
    values.push_back(nodes_[v.id()].value);
  }
  Tensor value = evaluate(op, values, attrs);
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite output from ") + op_name(op));
  }
  nodes_.push_back(Node{op, std::move(ids), std::move(attrs), std::move(value)});
  return Var(this, nodes_.size() - 1);
}

void Graph::set_leaf_value(Var leaf, Tensor value) {
  Node& n = nodes_.at(leaf.id());
  if (n.op != OpKind::kLeaf) throw std::invalid_argument("set_leaf_value: node is not a leaf");
  if (n.value.shape() != value.shape()) throw ShapeError("set_leaf_value: shape changed");
  require_finite(value, "leaf");
  n.value = std::move(value);
}

void Graph::replay() {
  std::vector<Tensor> values;
  for (auto& n : nodes_) {
    if (n.op == OpKind::kLeaf || n.op == OpKind::kConstant) continue;
    values.clear();
    for (auto i : n.inputs) values.push_back(nodes_[i].value);
    n.value = evaluate(n.op, values, n.attrs);
    if (!n.value.all_finite()) {
      throw NonFiniteError(std::string("non-finite output from ") + op_name(n.op) +
                           " during replay");
    }
  }
}

void Graph::truncate(std::size_t size) {
  if (size < nodes_.size()) nodes_.resize(size);
}

// --- primitives -----------------------------------------------------------

namespace {
Var unary(OpKind op, Var a, OpAttrs attrs = {}) {
  const Var in[] = {a};
  return a.graph().apply(op, in, std::move(attrs));
}
Var binary(OpKind op, Var a, Var b, OpAttrs attrs = {}) {
  const Var in[] = {a, b};
  return a.graph().apply(op, in, std::move(attrs));
}
}  // namespace

Var add(Var a, Var b) { return binary(OpKind::kAdd, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::kSub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::kMul, a, b); }

Var scale(Var a, double s) {
  OpAttrs at;
  at.scalar = s;
  return unary(OpKind::kScale, a, std::move(at));
}

Var matmul(Var a, Var b, bool trans_a, bool trans_b) {
  OpAttrs at;
  at.trans_a = trans_a;
  at.trans_b = trans_b;
  return binary(OpKind::kMatMul, a, b, std::move(at));
}

Var bias_add(Var a, Var bias) { return binary(OpKind::kBiasAdd, a, bias); }
Var channel_sum(Var a) { return unary(OpKind::kChannelSum, a); }

Var channel_broadcast(Var v, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return unary(OpKind::kChannelBroadcast, v, std::move(at));
}

Var relu(Var a) { return unary(OpKind::kRelu, a); }
Var relu_mask(Var a) { return unary(OpKind::kReluMask, a); }
Var square(Var a) { return unary(OpKind::kSquare, a); }
Var sum(Var a) { return unary(OpKind::kSum, a); }
Var mean(Var a) { return unary(OpKind::kMean, a); }

Var fill(Var scalar, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return unary(OpKind::kFill, scalar, std::move(at));
}

Var log_softmax(Var a) { return unary(OpKind::kLogSoftmax, a); }
Var exp(Var a) { return unary(OpKind::kExp, a); }
Var log(Var a) { return unary(OpKind::kLog, a); }
Var reciprocal(Var a) { return unary(OpKind::kReciprocal, a); }

Var gather_row(Var a, std::vector<std::size_t> indices) {
  OpAttrs at;
  at.indices = std::move(indices);
  return unary(OpKind::kGatherRow, a, std::move(at));
}

Var scatter_row(Var g, std::vector<std::size_t> indices, std::size_t cols) {
  OpAttrs at;
  at.indices = std::move(indices);
  at.end = cols;
  return unary(OpKind::kScatterRow, g, std::move(at));
}

Var reshape(Var a, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return unary(OpKind::kReshape, a, std::move(at));
}

Var flatten(Var a) {
  const auto& s = a.shape();
  if (s.empty()) throw ShapeError("flatten: scalar input");
  return reshape(a, {s[0], a.value().size() / s[0]});
}

Var conv2d(Var x, Var k) { return binary(OpKind::kConv2d, x, k); }

Var conv2d_input_grad(Var g, Var k, std::size_t height, std::size_t width) {
  OpAttrs at;
  at.shape = {height, width};
  return binary(OpKind::kConv2dInputGrad, g, k, std::move(at));
}

Var conv2d_kernel_grad(Var x, Var g, std::size_t kh, std::size_t kw) {
  OpAttrs at;
  at.shape = {kh, kw};
  return binary(OpKind::kConv2dKernelGrad, x, g, std::move(at));
}

Var avgpool2d(Var x) { return unary(OpKind::kAvgPool2d, x); }
Var avgpool2d_grad(Var g) { return unary(OpKind::kAvgPool2dGrad, g); }
Var row_sum(Var a) { return unary(OpKind::kRowSum, a); }

Var row_broadcast(Var v, std::size_t cols) {
  OpAttrs at;
  at.end = cols;
  return unary(OpKind::kRowBroadcast, v, std::move(at));
}

Var slice0(Var a, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.begin = begin;
  at.end = end;
  return unary(OpKind::kSlice0, a, std::move(at));
}

Var pad0(Var a, std::size_t begin, std::size_t total) {
  OpAttrs at;
  at.begin = begin;
  at.end = total;
  return unary(OpKind::kPad0, a, std::move(at));
}

Var concat0(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  return parts.front().graph().apply(OpKind::kConcat0, parts);
}

// --- differentiation ------------------------------------------------------

const GradMap::Entry& GradMap::at(Var leaf) const {
  auto it = entries_.find(leaf.id());
  if (it == entries_.end()) throw std::out_of_range("GradMap: leaf was not requested");
  return it->second;
}

Var GradMap::node(Var leaf) const {
  const auto& e = at(leaf);
  if (!e.node) throw std::logic_error("GradMap: gradients were built without create_graph");
  return *e.node;
}

void GradMap::insert(Var leaf, Entry entry) { entries_.insert_or_assign(leaf.id(), std::move(entry)); }

GradMap backward(Var output, std::span<const Var> leaves, bool create_graph) {
  Graph& graph = output.graph();
  if (output.value().size() != 1) {
    throw ShapeError("backward: output must be scalar, got " + shape_str(output.shape()));
  }
  const std::size_t mark = graph.size();
  const std::size_t root = output.id();

  std::unordered_set<std::size_t> wanted;
  for (const auto& l : leaves) {
    if (&l.graph() != &graph) throw std::invalid_argument("backward: leaf from another graph");
    wanted.insert(l.id());
  }

  // Ancestors of the output through differentiable edges only.
  std::vector<std::size_t> order;
  {
    std::unordered_set<std::size_t> seen{root};
    std::vector<std::size_t> stack{root};
    while (!stack.empty()) {
      const std::size_t id = stack.back();
      stack.pop_back();
      order.push_back(id);
      const Node& n = graph.node(id);
      if (!propagates(n.op)) continue;
      for (auto i : n.inputs) {
        if (seen.insert(i).second) stack.push_back(i);
      }
    }
    std::sort(order.begin(), order.end());
  }

  std::unordered_map<std::size_t, char> needs;
  for (auto id : order) {
    const Node& n = graph.node(id);
    bool need = wanted.contains(id);
    if (!need && propagates(n.op)) {
      need = std::any_of(n.inputs.begin(), n.inputs.end(), [&](std::size_t i) {
        auto it = needs.find(i);
        return it != needs.end() && it->second;
      });
    }
    needs[id] = need ? 1 : 0;
  }

  std::unordered_map<std::size_t, Var> adjoint;
  if (needs[root]) adjoint.emplace(root, graph.constant(Tensor::full(output.shape(), 1.0)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t id = *it;
    if (!needs[id]) continue;
    auto adj = adjoint.find(id);
    if (adj == adjoint.end() || !propagates(graph.node(id).op)) continue;
    const auto inputs = graph.node(id).inputs;
    auto contributions = vjp(graph, id, adj->second, needs);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!contributions[k]) continue;
      auto slot = adjoint.find(inputs[k]);
      if (slot == adjoint.end()) {
        adjoint.emplace(inputs[k], *contributions[k]);
      } else {
        slot->second = add(slot->second, *contributions[k]);
      }
    }
  }

  GradMap result;
  for (const auto& l : leaves) {
    GradMap::Entry entry;
    auto adj = adjoint.find(l.id());
    if (adj != adjoint.end()) {
      entry.value = adj->second.value();
      if (create_graph) entry.node = adj->second;
    } else {
      entry.value = Tensor::zeros(l.shape());
      if (create_graph) entry.node = graph.constant(entry.value);
    }
    result.insert(l, std::move(entry));
  }
  if (!create_graph) graph.truncate(mark);
  return result;
}

std::vector<Var> grad(Var output, std::span<const Var> wrt) {
  auto map = backward(output, wrt, true);
  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) out.push_back(map.node(w));
  return out;
}

std::vector<Tensor> grad_values(Var output, std::span<const Var> wrt) {
  auto map = backward(output, wrt, false);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) out.push_back(map.value(w));
  return out;
}

std::vector<Var> jacobian_rows(Var logits, Var x) {
  if (logits.shape().size() != 2) throw ShapeError("jacobian_rows: logits must be [B, C]");
  const std::size_t rows = logits.shape()[0];
  const std::size_t classes = logits.shape()[1];
  std::vector<Var> out;
  out.reserve(classes);
  const Var wrt[] = {x};
  for (std::size_t p = 0; p < classes; ++p) {
    Var picked = sum(gather_row(logits, std::vector<std::size_t>(rows, p)));
    out.push_back(grad(picked, wrt).front());
  }
  return out;
}

Var frob_sq(Var j) { return sum(square(j)); }

}  // namespace jens::ad
