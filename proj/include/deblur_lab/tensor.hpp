#pragma once

// Dense row-major tensors of doubles with a reverse-mode autodiff tape.
//
// A Tensor is a cheap handle onto shared storage. Leaves created with
// requires_grad=true collect gradients; every op whose inputs require grad
// records a backward closure and references to its parents, so the graph is a
// DAG rooted at whatever scalar backward() is called on.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace deblur {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode;

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Writable view for leaves only (initializers, optimizers, finite-difference probes).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::vector<double>& grad_buffer();  // allocates zeros on first use
  void zero_grad();

  const std::string& op() const;
  bool is_leaf() const;

  // Same values, no history, gradients off.
  Tensor detach() const;

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, std::string, std::vector<Tensor>,
                               std::function<void(std::span<const double>)>);

  std::shared_ptr<TensorNode> node_;
};

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  bool backward_done = false;
  std::string op = "leaf";
  std::vector<Tensor> parents;
  // Receives this node's output gradient and accumulates into parents.
  std::function<void(std::span<const double>)> backward;
};

// Builds an op output. When no parent requires grad the history is dropped.
Tensor make_op_result(Shape shape, std::vector<double> values, std::string op,
                      std::vector<Tensor> parents,
                      std::function<void(std::span<const double>)> backward);

// Disables history recording on this thread for its lifetime.
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

// Runs reverse-mode accumulation from a scalar. Throws StateError when called a
// second time on the same graph without clear_graph_grads().
void backward(const Tensor& loss);

// Zeroes every gradient reachable from `root` and re-arms backward().
void clear_graph_grads(const Tensor& root);

}  // namespace deblur
