#include "devlbert/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace devlbert {

int numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& shape) {
  for (int d : shape) {
    if (d < 1) throw DimensionError("invalid tensor shape " + shape_to_string(shape));
  }
}
}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  check_shape(shape);
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data.assign(static_cast<std::size_t>(devlbert::numel(node_->shape)), fill);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (devlbert::numel(shape) != static_cast<int>(data.size())) {
    throw DimensionError("tensor: shape " + shape_to_string(shape) + " does not match buffer of length " +
                         std::to_string(data.size()));
  }
  node_ = std::make_shared<TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

double& Tensor::at(int i, int j) {
  if (dim() != 2) throw DimensionError("at(i,j) on non-2d tensor " + shape_to_string(shape()));
  return node_->data[static_cast<std::size_t>(i * size(1) + j)];
}

double Tensor::at(int i, int j) const { return const_cast<Tensor*>(this)->at(i, j); }

double& Tensor::at(int i) {
  if (dim() != 1) throw DimensionError("at(i) on non-1d tensor " + shape_to_string(shape()));
  return node_->data[static_cast<std::size_t>(i)];
}

double Tensor::at(int i) const { return const_cast<Tensor*>(this)->at(i); }

double Tensor::value() const {
  if (numel() != 1) throw DimensionError("value() on non-scalar tensor " + shape_to_string(shape()));
  return node_->data[0];
}

const std::vector<double>& Tensor::grad() const {
  if (!node_ || !node_->has_grad()) throw ValidationError("gradient not populated; run backward() first");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && node_->has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() {
  if (!node_) throw ValidationError("backward() on undefined tensor");
  if (numel() != 1) {
    throw DimensionError("backward() requires a scalar loss, got " + shape_to_string(shape()));
  }
  if (node_->tape_consumed) {
    throw ValidationError("backward() called twice; the tape is freed after the first sweep");
  }

  // Iterative postorder DFS over parents: leaves land first, the loss last.
  std::vector<TensorNode*> topo;
  std::unordered_set<const TensorNode*> seen;
  struct Frame {
    TensorNode* n;
    std::size_t next;
  };
  std::vector<Frame> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next++].get();
      if (p && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }

  // Free the tape. Leaves-first order keeps every node alive while its own
  // members are being cleared (consumers still hold the shared_ptr).
  for (TensorNode* n : topo) {
    if (n->backward_fn) n->tape_consumed = true;
    n->parents.clear();
    n->backward_fn = nullptr;
  }
}

Tensor Tensor::detach() const {
  if (!node_) return Tensor();
  return Tensor(Shape(node_->shape), std::vector<double>(node_->data), false);
}

Tensor make_op_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  bool track = false;
  for (const Tensor& p : parents) track = track || (p.defined() && p.requires_grad());
  if (track) {
    out.set_requires_grad(true);
    auto& node = *out.node();
    node.parents.reserve(parents.size());
    for (Tensor& p : parents) node.parents.push_back(p.node());
    node.backward_fn = std::move(backward_fn);
  }
  return out;
}

}  // namespace devlbert
