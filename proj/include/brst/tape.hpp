#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "brst/array.hpp"

namespace brst {

class Tape;

// One node of the computation graph: a value, its adjoint, and the
// closure that pushes the adjoint into the parents.
struct Node {
  Array value;
  Array grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  bool has_grad_storage = false;
  bool needed = false;  // scratch flag used by Tape::backward
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  explicit Node(Array v) : value(std::move(v)) {}

  Array& ensure_grad() {
    if (!has_grad_storage) {
      grad = Array::zeros(value.shape());
      has_grad_storage = true;
    }
    return grad;
  }
  void zero_grad() {
    if (has_grad_storage) {
      for (double& g : grad.vec()) g = 0.0;
    }
  }
};

// Value handle. Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value, bool requires_grad = false) : node_(std::make_shared<Node>(std::move(value))) {
    node_->requires_grad = requires_grad;
  }

  static Tensor leaf(Array value) { return Tensor(std::move(value), true); }
  static Tensor constant(Array value) { return Tensor(std::move(value), false); }

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  Array& value() { return node_->value; }
  const Array& grad() const { return node_->grad; }
  Array& ensure_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->zero_grad(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::vector<int64_t>& shape() const { return node_->value.shape(); }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Ordered record of primitive applications. Creation order is topological
// by construction; backward walks it exactly once in reverse.
class Tape {
 public:
  void record(std::shared_ptr<Node> node) { record_.push_back(std::move(node)); }
  size_t size() const { return record_.size(); }
  void clear() { record_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and accumulates adjoints into every
  // reachable node, leaves included. Loss must be scalar.
  void backward(const Tensor& loss);

 private:
  std::vector<std::shared_ptr<Node>> record_;
};

// Scoped activation of a tape. While a scope is alive, primitives with
// grad-requiring inputs are recorded; otherwise they run value-only.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

}  // namespace brst
