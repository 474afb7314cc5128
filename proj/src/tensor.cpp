#include "mac/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "mac/errors.hpp"

namespace mac {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T>::Node::~Node() {
  std::vector<std::shared_ptr<Node>> pending = std::move(parents);
  while (!pending.empty()) {
    std::shared_ptr<Node> n = std::move(pending.back());
    pending.pop_back();
    if (n.use_count() == 1) {
      for (auto& p : n->parents) pending.push_back(std::move(p));
      n->parents.clear();
    }
  }
}

template <typename T>
std::vector<T>& Tensor<T>::Node::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  return grad;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return shape_numel(shape());
}

template <typename T>
std::span<T> Tensor<T>::data() {
  shape();
  return node_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  shape();
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  shape();
  node_->requires_grad = on;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size();
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  shape();
  return node_->grad_buffer();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  shape();
  return node_->grad_buffer();
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
const std::string& Tensor<T>::op() const {
  shape();
  return node_->op;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(std::string op, Shape shape, std::vector<T> values,
                                 const std::vector<Tensor>& parents,
                                 std::function<void(Node&)> backward) {
  Tensor out = from(std::move(shape), std::move(values));
  out.node_->op = std::move(op);
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (const auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

template <typename T>
Graph<T> Graph<T>::trace(const Tensor<T>& root) {
  using Node = typename Tensor<T>::Node;
  Graph g;
  if (!root.defined()) return g;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS: (node, next parent index).
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      g.order_.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;
  const auto graph = Graph<T>::trace(*this);
  node_->grad_buffer()[0] += T(1);
  const auto& order = graph.nodes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace mac
