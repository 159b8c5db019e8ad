#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "slicemoa/error.hpp"

namespace slicemoa {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  // Empty until something is accumulated into it.
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs' grads.
  std::function<void(Node&)> backward;

  std::span<double> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Dense row-major double tensor with reverse-mode differentiation.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Results of operations on tensors that require gradients record their
/// inputs, forming the tape that `backward()` replays in reverse topological
/// order. Leaf gradients accumulate across backward calls until `zero_grad()`.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor shape " + to_string(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    for (std::size_t extent : shape) {
      if (extent == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  /// 1-D tensor from a list of values.
  static Tensor from(std::vector<double> values, bool requires_grad = false) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }

  /// Writable values. Only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->data; }

  double operator[](std::size_t flat) const { return node_->data[flat]; }
  double at(std::size_t i, std::size_t j) const { return node_->data[i * node_->shape[1] + j]; }

  double item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }

  std::vector<double> values() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Value copy detached from any graph.
  Tensor detach() const { return Tensor(shape(), values(), false); }

  /// Propagates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  /// Builds an operation result. The graph edge is recorded only when some
  /// input requires a gradient.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                            const char* op, std::function<void(detail::Node&)> backward_fn) {
    Tensor out(std::move(shape), std::move(values), false);
    bool any = false;
    for (const Tensor& in : inputs) any = any || in.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      out.node_->op = op;
      out.node_->inputs.reserve(inputs.size());
      for (Tensor& in : inputs) out.node_->inputs.push_back(std::move(in.node_));
      out.node_->backward = std::move(backward_fn);
    }
    return out;
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Gradient buffer of the i-th input, or an empty span if it needs none.
inline std::span<double> input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  if (!in.requires_grad) return {};
  return in.grad_buffer();
}

inline std::span<const double> input_data(const Node& self, std::size_t i) {
  return self.inputs[i]->data;
}

}  // namespace detail

inline void Tensor::backward() const {
  if (numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (!requires_grad()) {
    throw ContractError("backward() on a tensor that does not depend on any requires_grad leaf");
  }

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-pass; leaf gradients accumulate.
  for (detail::Node* node : order) {
    if (node->backward) node->grad.assign(node->data.size(), 0.0);
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace slicemoa
