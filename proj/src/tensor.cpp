#include "deblur_lab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "deblur_lab/errors.hpp"

namespace deblur {

std::size_t shape_numel(const Shape& shape) {
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

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
}

const TensorNode& deref(const std::shared_ptr<TensorNode>& node) {
  if (!node) throw StateError("use of an undefined tensor");
  return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  std::vector<double> values(shape_numel(shape), value);
  return from_values(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape))
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_values({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return deref(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return deref(node_).values.size(); }

std::span<const double> Tensor::values() const { return deref(node_).values; }

std::span<double> Tensor::mutable_values() {
  deref(node_);
  if (!node_->parents.empty()) throw StateError("only leaf tensors may be modified in place");
  return node_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return deref(node_).requires_grad; }

bool Tensor::has_grad() const { return !deref(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return deref(node_).grad; }

std::vector<double>& Tensor::grad_buffer() {
  deref(node_);
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  deref(node_);
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  node_->backward_done = false;
}

const std::string& Tensor::op() const { return deref(node_).op; }

bool Tensor::is_leaf() const { return deref(node_).parents.empty(); }

Tensor Tensor::detach() const { return from_values(shape(), deref(node_).values, false); }

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_op_result(Shape shape, std::vector<double> values, std::string op, std::vector<Tensor> parents,
                      std::function<void(std::span<const double>)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = std::move(op);
  const bool tracked =
      t_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (tracked) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

namespace {

// Reverse topological order (root first) of nodes that require grad.
std::vector<TensorNode*> reverse_topological(TensorNode* root) {
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].node();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

}  // namespace

void backward(const Tensor& loss) {
  if (!loss.defined()) throw StateError("backward() on an undefined tensor");
  if (loss.numel() != 1)
    throw DimensionError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  TensorNode* root = loss.node();
  if (root->backward_done) throw StateError("backward() already ran on this graph; clear gradients first");
  root->backward_done = true;
  if (!root->requires_grad) return;

  const auto order = reverse_topological(root);
  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;
  for (TensorNode* node : order) {
    if (!node->backward) continue;
    if (node->grad.empty()) continue;  // nothing flowed into this node
    for (auto& parent : node->parents)
      if (parent.requires_grad()) parent.grad_buffer();
    node->backward(node->grad);
  }
}

void clear_graph_grads(const Tensor& root) {
  if (!root.defined()) return;
  root.node()->backward_done = false;
  if (!root.requires_grad()) {
    root.node()->grad.clear();
    return;
  }
  for (TensorNode* node : reverse_topological(root.node())) std::fill(node->grad.begin(), node->grad.end(), 0.0);
}

}  // namespace deblur
