#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "fld/nn/tensor.hpp"

namespace fld::nn {

template <typename T>
class Graph;

// Lightweight handle to a node inside a Graph.
template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
};

// Trainable weight with its gradient accumulator. Owned by a ParamStore;
// graphs reference it through leaf nodes.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  void zero_grad() { grad.zero(); }
};

// Non-trainable persistent state (batchnorm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

// Tape of eagerly evaluated operations. Creation order is a topological
// order, so backward is a plain reverse sweep.
template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily during backward
    std::function<void(Graph&)> backward;
    Parameter<T>* param = nullptr;  // set for parameter leaves
    bool needs_grad = false;
    const char* op = "";
  };

  int add(const char* op, std::vector<int> inputs, Tensor<T> value) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (int in : inputs)
      if (node(in).needs_grad) n.needs_grad = true;
    inputs_.push_back(std::move(inputs));
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_backward(int id, std::function<void(Graph&)> fn) {
    node(id).backward = std::move(fn);
  }

  Var<T> leaf(Tensor<T> value, bool needs_grad = false) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    inputs_.emplace_back();
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Parameter leaf: shares nothing, but backward accumulates into p.grad.
  Var<T> param(Parameter<T>& p) {
    Node n;
    n.op = "param";
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    inputs_.emplace_back();
    nodes_.push_back(std::move(n));
    int id = static_cast<int>(nodes_.size()) - 1;
    set_backward(id, [id](Graph& g) {
      Node& self = g.node(id);
      if (self.grad.empty()) return;
      Parameter<T>& par = *self.param;
      if (par.grad.empty()) par.grad = Tensor<T>(par.value.shape());
      const T* src = self.grad.data();
      T* dst = par.grad.data();
      for (std::int64_t i = 0; i < self.grad.size(); ++i) dst[i] += src[i];
    });
    return {this, id};
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const std::vector<int>& inputs(int id) const { return inputs_[static_cast<std::size_t>(id)]; }

  Tensor<T>& value(Var<T> v) { return node(v.id).value; }
  const Tensor<T>& value(Var<T> v) const { return node(v.id).value; }

  // Gradient accumulator for a node, allocated on first use. Returns null
  // when the node does not require gradients, so ops can skip work.
  Tensor<T>* grad_if_needed(int id) {
    Node& n = node(id);
    if (!n.needs_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  const Tensor<T>& grad(Var<T> v) const { return node(v.id).grad; }

  // Reverse sweep from a scalar loss node.
  void backward(Var<T> loss) {
    Node& ln = node(loss.id);
    if (ln.value.size() != 1) throw ShapeError("backward: loss must be scalar");
    if (!ln.needs_grad) return;
    if (ln.grad.empty()) ln.grad = Tensor<T>(ln.value.shape());
    ln.grad[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = node(id);
      if (!n.needs_grad || !n.backward || n.grad.empty()) continue;
      n.backward(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<int>> inputs_;
};

}  // namespace fld::nn
