#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "asymloc/errors.hpp"
#include "asymloc/tensor.hpp"

namespace asymloc {

/// Handle to a node in a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only reverse-mode tape. One forward, one backward, then reset().
/// Confined to a single thread for its lifetime.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
  Var parameter(Tensor<T> value) { return leaf(std::move(value), true); }

  /// Used by ops: appends a node whose inputs are all earlier nodes.
  Var record(Tensor<T> value, std::vector<int> inputs, BackwardFn backward) {
    if (backward_done_) throw ContractError("graph already consumed by backward; call reset()");
    bool needs = false;
    for (int in : inputs) {
      if (in < 0 || in >= static_cast<int>(nodes_.size()))
        throw ContractError("op input refers to a node that does not exist yet");
      needs = needs || nodes_[static_cast<std::size_t>(in)].needs_grad;
    }
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v.id).value; }
  bool needs_grad(Var v) const { return node(v.id).needs_grad; }
  bool needs_grad(int id) const { return node(id).needs_grad; }
  bool is_parameter(Var v) const { return node(v.id).trainable; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient slot of a node, zero-initialized on first touch. Only valid
  /// while backward() is running (ops call it from their backward fns).
  Tensor<T>& grad_slot(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.dims(), T(0));
    return n.grad;
  }

  /// Reverse sweep from a scalar loss. Returns the gradient of every
  /// parameter node, zero for parameters the loss does not depend on.
  std::map<int, Tensor<T>> backward(Var loss) {
    if (backward_done_) throw ContractError("backward called twice without a new forward pass");
    const Node& ln = node(loss.id);
    if (ln.value.size() != 1) throw ContractError("backward requires a scalar loss node");
    backward_done_ = true;
    visits_ = 0;
    if (ln.needs_grad) {
      grad_slot(loss.id)[0] = T(1);
      for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad || n.grad.empty()) continue;
        ++visits_;
        if (n.backward) n.backward(*this, id);
      }
    }
    std::map<int, Tensor<T>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (!n.trainable) continue;
      out.emplace(static_cast<int>(i), n.grad.empty() ? Tensor<T>(n.value.dims(), T(0)) : n.grad);
    }
    return out;
  }

  /// Gradient accumulated into any node by the last backward (zeros if none).
  Tensor<T> grad(Var v) const {
    const Node& n = node(v.id);
    return n.grad.empty() ? Tensor<T>(n.value.dims(), T(0)) : n.grad;
  }

  std::size_t last_backward_visits() const { return visits_; }
  bool consumed() const { return backward_done_; }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
    visits_ = 0;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    bool trainable = false;
  };

  Var leaf(Tensor<T> value, bool trainable) {
    if (backward_done_) throw ContractError("graph already consumed by backward; call reset()");
    if (!value.all_finite()) throw NumericFault("non-finite value entering the graph");
    Node n;
    n.value = std::move(value);
    n.needs_grad = trainable;
    n.trainable = trainable;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size()))
      throw ContractError("invalid graph variable");
    return nodes_[static_cast<std::size_t>(id)];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t visits_ = 0;
};

}  // namespace asymloc
