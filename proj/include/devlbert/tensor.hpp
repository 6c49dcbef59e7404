#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "devlbert/error.hpp"

namespace devlbert {

using Shape = std::vector<int>;

int numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

/// One node of the backward tape: a flat row-major f64 buffer, its shape, an
/// optional gradient buffer of the same shape, and the edges/closure needed to
/// push gradients into the parents. The tape is whatever graph a forward pass
/// builds; Tensor::backward() walks it once and then frees it.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool tape_consumed = false;  // set when backward() has already freed this node's edges
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

/// Dense n-dimensional f64 tensor with reverse-mode gradient tracking.
/// Value-semantics handle to a shared node; cheap to copy and to move across
/// threads. All math on tensors lives in free functions (ops.hpp).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim() const { return static_cast<int>(node_->shape.size()); }
  int size(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }
  int numel() const { return static_cast<int>(node_->data.size()); }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& buffer() { return node_->data; }
  const std::vector<double>& buffer() const { return node_->data; }

  /// Element access for 2-d tensors.
  double& at(int i, int j);
  double at(int i, int j) const;

  /// Element access for 1-d tensors.
  double& at(int i);
  double at(int i) const;

  /// Value of a single-element tensor.
  double value() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_ && node_->has_grad(); }
  /// Gradient buffer (same shape as data). Throws if backward never reached this tensor.
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Populates grad on every reachable
  /// requires_grad tensor, then releases the graph (single-shot tape).
  void backward();

  /// Copy of the values with no graph attached and requires_grad off.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

/// Graph-building helper used by every op: allocates the result node and wires
/// parents/backward only when some parent tracks gradients.
Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn);

}  // namespace devlbert
