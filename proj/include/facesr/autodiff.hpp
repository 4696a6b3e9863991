#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "facesr/tensor.hpp"

namespace facesr {

// Reverse-mode autodiff over a dynamically built graph. Parameter leaves are
// long-lived; their gradients accumulate across backward() calls until the
// optimizer clears them. Intermediate nodes die with the graph root.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor val;
  Tensor grad;
  bool needs_grad = false;
  bool is_param = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;
  int64_t id = 0;

  static int64_t next_id() {
    static std::atomic<int64_t> counter{0};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }
};

inline Var make_param(Tensor value) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->grad = Tensor::zeros(n->val.shape);
  n->needs_grad = true;
  n->is_param = true;
  n->id = Node::next_id();
  return n;
}

inline Var make_const(Tensor value) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->id = Node::next_id();
  return n;
}

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->val = std::move(value);
  n->parents = std::move(parents);
  for (const Var& p : n->parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) n->backprop = std::move(backprop);
  n->id = Node::next_id();
  return n;
}

// Detached copy: same value, no history. Used where one network's output
// feeds another without backpropagating across the boundary.
inline Var detach(const Var& x) { return make_const(x->val); }

inline void backward(const Var& root) {
  if (root->val.numel() != 1) throw std::logic_error("backward: root must be scalar");
  if (!root->needs_grad) return;

  // Reachable grad-requiring subgraph; ids increase in creation order, so a
  // descending-id sweep is a valid topological order.
  std::vector<Node*> nodes;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const Var& p : n->parents) {
      if (p->needs_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.push_back(p.get());
      }
    }
  }
  std::sort(nodes.begin(), nodes.end(), [](Node* a, Node* b) { return a->id > b->id; });

  for (Node* n : nodes) {
    if (!n->is_param) n->grad = Tensor::zeros(n->val.shape);
  }
  root->grad.v[0] = 1.0;
  for (Node* n : nodes) {
    if (n->backprop) n->backprop(*n);
  }
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  for (int i = 0; i < dst.numel(); ++i) dst.v[i] += src.v[i];
}

}  // namespace facesr
