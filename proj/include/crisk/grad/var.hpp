#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crisk/grad/tensor.hpp"

namespace crisk::grad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One recorded operation (or a leaf). The backward closure reads this
/// node's grad and accumulates into its parents' grads.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
  bool leaf = false;

  void ensure_grad() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape());
  }
};

/// Handle to a graph node. Cheap to copy; the graph lives as long as the
/// handles that reach it.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  Tensor& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const { return node_->value.item(); }
  const NodePtr& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

/// Trainable leaf.
inline Var parameter(Tensor init) {
  auto n = std::make_shared<Node>();
  n->value = std::move(init);
  n->requires_grad = true;
  n->leaf = true;
  n->ensure_grad();
  return Var(std::move(n));
}

/// Non-trainable leaf.
inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->leaf = true;
  return Var(std::move(n));
}

inline Var constant(double v) { return constant(Tensor::scalar(v)); }

/// Records an operation. The backward closure is dropped when no parent needs
/// a gradient so that pure-evaluation graphs stay cheap.
inline Var record(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (auto& p : parents) any = any || p.requires_grad();
  n->requires_grad = any;
  if (any) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

namespace detail {

inline void topo_visit(const NodePtr& n, std::unordered_set<Node*>& seen, std::vector<Node*>& order) {
  // Iterative DFS; deep transformer graphs overflow the stack otherwise.
  std::vector<std::pair<Node*, std::size_t>> stack;
  if (!seen.insert(n.get()).second) return;
  stack.emplace_back(n.get(), 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Parameter leaves accumulate across
/// calls; intermediate buffers are reset on every call.
inline void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  std::unordered_set<Node*> seen;
  std::vector<Node*> order;
  detail::topo_visit(loss.node(), seen, order);
  for (Node* n : order) {
    if (!n->leaf) {
      n->ensure_grad();
      n->grad.fill(0.0);
    }
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace crisk::grad
