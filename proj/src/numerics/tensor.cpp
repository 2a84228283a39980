#include "wss/numerics/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace wss {

namespace {
thread_local bool g_grad_enabled = true;
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
void Tensor<Scalar>::Node::accumulate(const Array& g) {
  if (grad.size() != value.size()) {
    grad = g;
  } else {
    grad += g;
  }
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Scalar fill, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  node_->value = Array::Constant(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  }
  node_->value = std::move(values);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
typename Tensor<Scalar>::Array& Tensor<Scalar>::mutable_value() {
  if (!node_->is_leaf()) throw Error(std::string("in-place write to result of op ") + node_->op);
  return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Tensor<Scalar>::grad() const {
  if (!has_grad()) throw Error("tensor of shape " + shape_str(shape()) + " has no gradient");
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad = Array();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::make_result(const char* op, Shape shape, Array value,
                                           std::initializer_list<const Tensor*> parents,
                                           std::function<void(Node&)> backward_fn) {
  std::vector<Tensor> ps;
  ps.reserve(parents.size());
  for (const Tensor* p : parents) {
    if (p && p->defined()) ps.push_back(*p);
  }
  return make_result(op, std::move(shape), std::move(value), ps, std::move(backward_fn));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::make_result(const char* op, Shape shape, Array value,
                                           const std::vector<Tensor>& parents,
                                           std::function<void(Node&)> backward_fn) {
  if (value.size() != shape_numel(shape)) {
    throw ShapeError(std::string(op) + ": produced " + std::to_string(value.size()) +
                     " values for shape " + shape_str(shape));
  }
  if (!value.allFinite()) {
    throw NumericError(std::string(op) + ": non-finite output of shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool any = false;
  for (const Tensor& p : parents) any = any || p.requires_grad();
  if (any && g_grad_enabled) {
    n->requires_grad = true;
    for (const Tensor& p : parents) {
      if (p.node_->released) {
        throw Error(std::string(op) + ": operand graph already released");
      }
      n->parents.push_back(p.node_);
    }
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

template <typename Scalar>
void backward(const Tensor<Scalar>& loss, bool retain_graph) {
  using Node = typename Tensor<Scalar>::Node;
  if (!loss.defined()) throw Error("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  Node* root = loss.node().get();
  if (root->released) throw Error("backward: graph already released");
  if (!root->requires_grad) throw Error("backward: loss does not depend on any parameter");

  // Iterative post-order DFS gives a topological order (parents before children). The order
  // holds owning pointers because releasing a node drops its parents' last references.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& top = stack.back();
    if (top.second < top.first->parents.size()) {
      std::shared_ptr<Node> p = top.first->parents[top.second++];
      if (p->requires_grad && !visited.count(p.get())) {
        if (p->released) throw Error("backward: graph already released");
        visited.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(std::move(top.first));
      stack.pop_back();
    }
  }

  for (const auto& n : order) {
    if (!n->is_leaf()) n->grad = typename Tensor<Scalar>::Array();
  }
  root->accumulate(Tensor<Scalar>::Array::Ones(1));

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (!n->backward_fn) continue;
    if (n->grad.size() == n->value.size()) n->backward_fn(*n);
    if (!retain_graph) {
      n->backward_fn = nullptr;
      n->parents.clear();
      n->released = true;
      n->grad = typename Tensor<Scalar>::Array();
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&, bool);
template void backward<double>(const Tensor<double>&, bool);

}  // namespace wss
