// Copyright 2026 The reglat Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode tape over Tensor<T>. Nodes are appended in evaluation
// order, so a reverse sweep is a valid topological order.

#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "reglat/core/tensor.hpp"

namespace reglat::ad {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
 public:
  /// Receives the gradient flowing into the node and accumulates into the
  /// node's inputs through `Tape::accumulate`.
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }
  Var parameter(Tensor<T> value) { return push(std::move(value), true, nullptr); }

  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(v.id)).needs_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }
  Var record(Tensor<T> value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(static_cast<std::size_t>(v.id)).needs_grad;
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  T scalar(Var v) const {
    require(node(v).value.size() == 1, "tape value is not a scalar");
    return node(v).value[0];
  }
  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Gradient of a leaf after the last backward sweep; empty when none
  /// arrived.
  const Tensor<T>& grad(Var v) const { return node(v).grad; }

  void accumulate(Var v, const Tensor<T>& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }
  void accumulate(Var v, Tensor<T>&& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      n.grad = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  /// Seeds d(root)/d(root) = 1 and sweeps the tape in reverse.
  void backward(Var root) {
    require(node(root).value.size() == 1, "backward needs a scalar root");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    node(root).grad = Tensor<T>(node(root).value.shape(), T(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
      // Interior gradients are consumed; only leaves keep theirs.
      n.grad = Tensor<T>();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Tensor<T> value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), needs_grad, std::move(backward)});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

  std::vector<Node> nodes_;
};

}  // namespace reglat::ad
