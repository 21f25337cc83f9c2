#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "detach/ad/param_tree.hpp"
#include "detach/ad/tensor.hpp"

namespace detach::ad {

using NodeId = std::uint32_t;
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
};

// Tape of operations in creation (= topological) order.
//
// A graph built with record=false keeps forward values only; it is used for
// rollouts where no gradient is ever requested.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);

  // Parameter leaf. Frozen groups enter as constants so their gradient is
  // exactly zero; otherwise backward() accumulates into Parameter::grad.
  Var param(ParamTree& tree, std::string_view name);
  Var param(ParamTree& tree, Parameter& p);

  // Used by op implementations.
  Var emit(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var emit(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  // Reverse sweep from a single-element node. Intermediate gradients are
  // reset first, so repeated calls give identical leaf gradients; Parameter
  // gradients accumulate across calls.
  void backward(Var loss);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient of the last backward() w.r.t. v; zeros if v did not participate.
  Tensor grad(Var v) const;

  // Mutable gradient buffer, allocated as zeros on first access.
  Tensor& grad_buffer(NodeId id);
  bool has_grad(NodeId id) const { return nodes_[id].has_grad; }
  const Tensor& grad_ref(NodeId id) const { return nodes_[id].grad; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[id].inputs; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
  };

  Var push(Node node);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace detach::ad
