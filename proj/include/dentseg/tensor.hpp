#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dentseg::nn {

/// Dense NCHW shape; lower-rank tensors set trailing dims to 1.
struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  long numel() const { return static_cast<long>(n) * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // allocated on demand
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
};

/// Value-semantics handle to a shared node in the backward graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape s, bool requires_grad = false);

  static Tensor zeros(Shape s, bool requires_grad = false) { return Tensor(s, requires_grad); }
  static Tensor full(Shape s, float v, bool requires_grad = false);
  static Tensor from_data(Shape s, std::vector<float> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  long numel() const { return node_->shape.numel(); }

  float* data() { return node_->value.data(); }
  const float* data() const { return node_->value.data(); }
  std::vector<float>& values() { return node_->value; }
  const std::vector<float>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  std::vector<float>& grad() { node_->ensure_grad(); return node_->grad; }
  const std::vector<float>* grad_if_any() const {
    return node_->grad.empty() ? nullptr : &node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
  }

  /// Scalar extraction; numel must be 1.
  float item() const;

  /// Reverse-mode pass from a scalar tensor (grad seeded with 1).
  void backward();
  /// Reverse-mode pass with an explicit output-gradient seed.
  void backward(const std::vector<float>& seed);

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Topological order with every consumer before its producers.
std::vector<Node*> reverse_topo_order(Node* root);

}  // namespace dentseg::nn
