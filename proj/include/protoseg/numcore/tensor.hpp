#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace protoseg::num {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents that require it.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

/// Handle to a node of the autodiff graph. Copies share the node.
///
/// A tensor created by an op records its inputs only when at least one
/// input requires a gradient, so inference paths build no graph.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  bool is_scalar() const { return node_->data.size() == 1; }

  std::span<const T> data() const { return node_->data; }
  // Direct mutation is reserved for optimizers and initializers operating
  // on leaf parameters outside of any live graph.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Fresh leaf with a copy of the values and no history.
  BasicTensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;

/// Whether ops on this thread record history. Defaults to true.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse pass from a scalar loss. Accumulates dloss/dtheta into the grad
/// buffer of every reachable tensor that requires a gradient.
template <typename T>
void backward(const BasicTensor<T>& loss);

/// Nodes reachable from `root` in topological order (inputs first).
template <typename T>
std::vector<Node<T>*> topo_order(const BasicTensor<T>& root);

}  // namespace protoseg::num
