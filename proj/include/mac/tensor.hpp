#pragma once

// Dense n-dimensional arrays with tape-free reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Operations on tensors that
// require gradients record their inputs and a backward rule on the result, so
// the graph is the set of results reachable from a loss through `parents`.
// Graphs are acyclic by construction: a result only ever points at tensors
// that existed before it.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mac {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Gradient recording is on by default; this disables it for the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

template <typename T>
class Tensor {
 public:
  using value_type = T;

  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something writes a gradient
    bool requires_grad = false;
    std::string op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Node() = default;
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;
    /// Unlinks ancestors iteratively so long chains don't recurse.
    ~Node();

    /// Gradient buffer, allocated (zeroed) on first use.
    std::vector<T>& grad_buffer();
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;
  T& operator[](std::size_t i) { return data()[i]; }
  const T& operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// Gradient values; zeros if nothing has been accumulated yet.
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  const std::string& op() const;

  /// Copy of the values without history.
  Tensor detach() const;

  /// Reverse-mode sweep from this scalar; accumulates into every reachable
  /// tensor that requires gradients.
  void backward() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Result of a differentiable operation. Records `parents` and `backward`
  /// only when recording is enabled and some parent requires gradients.
  static Tensor make_result(std::string op, Shape shape, std::vector<T> values,
                            const std::vector<Tensor>& parents,
                            std::function<void(Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Operations reachable from a root in an order where every node comes after
/// all of its inputs.
template <typename T>
class Graph {
 public:
  static Graph trace(const Tensor<T>& root);
  const std::vector<typename Tensor<T>::Node*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<typename Tensor<T>::Node*> order_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Elementwise precision conversion without history.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& src) {
  std::vector<To> values(src.numel());
  auto in = src.data();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<To>(in[i]);
  return Tensor<To>::from(src.shape(), std::move(values));
}

}  // namespace mac
