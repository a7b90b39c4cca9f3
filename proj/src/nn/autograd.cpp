#include "dfmsd/nn/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace dfmsd::nn {

Var Var::constant(Matrix value, Shape shape) { return leaf(std::move(value), shape, false); }

Var Var::leaf(Matrix value, Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->shape = shape;
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

double Var::item() const {
  if (node_->value.size() != 1)
    throw std::logic_error("Var::item on a non-scalar value");
  return node_->value(0, 0);
}

Var Var::make(Matrix value, Shape shape, std::vector<Var> inputs, std::function<void(Node &)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->shape = shape;
  for (auto &in : inputs)
    if (in.requires_grad())
      node->requires_grad = true;
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto &in : inputs)
      node->parents.push_back(in.node_);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

void Var::backward() const {
  if (node_->value.size() != 1)
    throw std::logic_error("backward() requires a scalar root");
  if (!node_->requires_grad)
    return;

  // iterative post-order DFS for a topological order
  std::vector<Node *> order;
  std::unordered_set<Node *> visited;
  std::vector<std::pair<Node *, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto &[n, next] = stack.back();
    if (next < n->parents.size()) {
      Node *p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n->backward && n->grad.size() != 0)
      n->backward(*n);
  }
  // interior gradients are not needed once propagated
  for (Node *n : order)
    if (n->backward)
      n->grad.resize(0, 0);
}

} // namespace dfmsd::nn
