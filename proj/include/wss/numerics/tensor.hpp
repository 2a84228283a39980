#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "wss/error.hpp"

namespace wss {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Whether newly created op results record the graph. Thread-local.
bool grad_enabled();

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense row-major n-dimensional array taking part in reverse-mode differentiation.
///
/// A Tensor is a cheap handle onto a shared graph node. Values are immutable once an op
/// has produced them; leaves (parameters, inputs) may be updated in place by optimizers.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  struct Node {
    Shape shape;
    Array value;
    Array grad;  // empty until a gradient has been accumulated
    bool requires_grad = false;
    bool released = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn && !released; }
    void accumulate(const Array& g);
  };

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false);
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), Scalar(1)); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  Index dim(int axis) const;
  Index numel() const { return node_->value.size(); }

  const Array& value() const { return node_->value; }
  const Scalar* data() const { return node_->value.data(); }
  /// In-place access; only legal on leaves.
  Array& mutable_value();
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  const Array& grad() const;
  void zero_grad();

  /// Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Builds an op result. Parents and the backward closure are kept only when recording
  /// is enabled and at least one parent requires a gradient. Non-finite values raise.
  static Tensor make_result(const char* op, Shape shape, Array value,
                            std::initializer_list<const Tensor*> parents,
                            std::function<void(Node&)> backward_fn);
  static Tensor make_result(const char* op, Shape shape, Array value,
                            const std::vector<Tensor>& parents,
                            std::function<void(Node&)> backward_fn);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// Populates gradients of every participating leaf with d(loss)/d(leaf). Repeated calls
/// accumulate. Without retain_graph the graph is released and a second call raises.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss, bool retain_graph = false);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template void backward<float>(const Tensor<float>&, bool);
extern template void backward<double>(const Tensor<double>&, bool);

}  // namespace wss
