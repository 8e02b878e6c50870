#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pdgr/numerics/tensor.hpp"

namespace pdgr {

namespace detail {

struct NodeData;
using BackwardFn = std::function<void(NodeData& self)>;

struct NodeData {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<NodeData>> parents;
  BackwardFn backward;
  bool requires_grad = false;

  NodeData& parent(std::size_t i) { return *parents[i]; }
};

}  // namespace detail

/// Handle to a tensor tracked in a reverse-mode computation graph.
///
/// Copies share the same underlying value and gradient. Graphs are built and
/// differentiated on a single thread.
class Node {
 public:
  Node() = default;

  /// Leaf whose gradient is tracked (a learnable parameter or a checked input).
  static Node parameter(Tensor value);
  /// Leaf that never receives gradient.
  static Node constant(Tensor value);

  /// Creates an interior node. `backward` reads `self.grad` and accumulates into
  /// the parents' grads; it is only invoked when some parent requires grad.
  static Node make(Tensor value, std::vector<Node> parents, detail::BackwardFn backward);

  const Tensor& value() const { return impl_->value; }
  Tensor& value() { return impl_->value; }
  const Tensor& grad() const { return impl_->grad; }
  Tensor& grad() { return impl_->grad; }
  const Shape& shape() const { return impl_->value.shape(); }
  bool requires_grad() const { return impl_->requires_grad; }
  double item() const { return impl_->value.item(); }
  void zero_grad() { impl_->grad.data().setZero(); }

  explicit operator bool() const { return static_cast<bool>(impl_); }
  detail::NodeData* data() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::NodeData> impl_;
};

/// Adds `g` into `node.grad` when the node tracks gradients.
inline void accumulate_grad(detail::NodeData& node, const Eigen::Ref<const Vector>& g) {
  if (node.requires_grad) node.grad.data() += g;
}

enum class Elementwise { add, sub, mul, div, exp, log, relu, sigmoid, square };

/// Shape produced by trailing-dimension broadcasting, or ShapeMismatch.
Shape broadcast_shape(const Shape& a, const Shape& b);

Node elementwise(Elementwise op, const Node& a, const Node* b = nullptr);

Node add(const Node& a, const Node& b);
Node sub(const Node& a, const Node& b);
Node mul(const Node& a, const Node& b);
Node div(const Node& a, const Node& b);
Node exp(const Node& a);
Node log(const Node& a);
Node relu(const Node& a);
Node sigmoid(const Node& a);
Node square(const Node& a);
Node scale(const Node& a, double factor);

inline Node operator+(const Node& a, const Node& b) { return add(a, b); }
inline Node operator-(const Node& a, const Node& b) { return sub(a, b); }
inline Node operator*(const Node& a, const Node& b) { return mul(a, b); }
inline Node operator/(const Node& a, const Node& b) { return div(a, b); }
inline Node operator*(double s, const Node& a) { return scale(a, s); }

Node matmul(const Node& a, const Node& b);
Node transpose(const Node& a);
Node reshape(const Node& a, Shape shape);
Node concat(std::span<const Node> parts, std::size_t axis);

enum class Reduce { sum, mean, max };

/// Reduces over `axis`, or over every element when `axis` is empty. The
/// reduced axis is removed from the shape. `max` sends gradient to the
/// lowest-index maximiser only.
Node reduce(Reduce op, const Node& a, std::optional<std::size_t> axis = std::nullopt);
inline Node sum(const Node& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(Reduce::sum, a, axis);
}
inline Node mean(const Node& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(Reduce::mean, a, axis);
}
inline Node max(const Node& a, std::optional<std::size_t> axis = std::nullopt) {
  return reduce(Reduce::max, a, axis);
}

/// Reverse-mode sweep from a scalar root. Gradients accumulate; callers zero.
void backward(const Node& root);

}  // namespace pdgr
