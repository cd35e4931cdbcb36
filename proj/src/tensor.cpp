#include "dentseg/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace dentseg::nn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape s, bool requires_grad) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw std::invalid_argument("Tensor: shape must be strictly positive, got " + s.str());
  }
  node_ = std::make_shared<Node>();
  node_->shape = s;
  node_->value.assign(static_cast<size_t>(s.numel()), 0.0f);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::full(Shape s, float v, bool requires_grad) {
  Tensor t(s, requires_grad);
  std::fill(t.node_->value.begin(), t.node_->value.end(), v);
  return t;
}

Tensor Tensor::from_data(Shape s, std::vector<float> data, bool requires_grad) {
  if (static_cast<long>(data.size()) != s.numel()) {
    throw std::invalid_argument("Tensor::from_data: buffer size does not match shape " + s.str());
  }
  Tensor t(s, requires_grad);
  t.node_->value = std::move(data);
  return t;
}

float Tensor::item() const {
  if (numel() != 1) throw std::logic_error("Tensor::item: tensor is not scalar");
  return node_->value[0];
}

std::vector<Node*> reverse_topo_order(Node* root) {
  // Iterative post-order DFS over parents; reversed, it yields each node
  // after all of its consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

void Tensor::backward() {
  if (numel() != 1) throw std::logic_error("Tensor::backward: output must be scalar");
  backward({1.0f});
}

void Tensor::backward(const std::vector<float>& seed) {
  if (static_cast<long>(seed.size()) != numel()) {
    throw std::invalid_argument("Tensor::backward: seed size does not match tensor");
  }
  node_->ensure_grad();
  for (size_t i = 0; i < seed.size(); ++i) node_->grad[i] += seed[i];

  for (Node* node : reverse_topo_order(node_.get())) {
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

}  // namespace dentseg::nn
