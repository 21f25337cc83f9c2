#include "detach/ad/graph.hpp"

#include <limits>
#include <stdexcept>

#include "detach/simd/kernels.hpp"

namespace detach::ad {

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::push(Node node) {
  if (nodes_.size() >= std::numeric_limits<NodeId>::max()) {
    throw std::length_error("Graph: node limit reached");
  }
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<NodeId>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && record_;
  return push(std::move(n));
}

Var Graph::param(ParamTree& tree, std::string_view name) { return param(tree, tree.get(name)); }

Var Graph::param(ParamTree& tree, Parameter& p) {
  Node n;
  n.value = p.value;
  if (record_ && !tree.frozen(p)) {
    n.requires_grad = true;
    n.param = &p;
  }
  return push(std::move(n));
}

Var Graph::emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return emit(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

Var Graph::emit(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  bool any = false;
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::invalid_argument("Graph::emit: operand from another graph");
    any = any || nodes_[v.id].requires_grad;
  }
  if (record_ && any) {
    n.requires_grad = true;
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) n.inputs.push_back(v.id);
    n.backward = std::move(fn);
  }
  return push(std::move(n));
}

Tensor& Graph::grad_buffer(NodeId id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Tensor::zeros_like(n.value);
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::invalid_argument("Graph::backward: loss from another graph");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     shape_to_string(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (NodeId id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
  }
  const auto& k = simd::kernels();
  for (auto& n : nodes_) {
    if (n.param != nullptr && n.has_grad) {
      k.axpy(1.0, n.grad.data().data(), n.param->grad.data().data(), n.grad.numel());
    }
  }
}

}  // namespace detach::ad
