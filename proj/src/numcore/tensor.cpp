#include "protoseg/numcore/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace protoseg::num {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  if (numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  if (!is_scalar()) throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
  return node_->data[0];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
std::vector<Node<T>*> topo_order(const BasicTensor<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative post-order DFS; parents are pushed in declaration order so the
  // ordering is a deterministic function of the graph.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ShapeError("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss is detached from every parameter");
  }
  auto order = topo_order(loss);
  auto* root = loss.node().get();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template std::vector<Node<float>*> topo_order(const BasicTensor<float>&);
template std::vector<Node<double>*> topo_order(const BasicTensor<double>&);
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace protoseg::num
