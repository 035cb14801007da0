#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace transfer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major f64 array with optional gradient tracking.
///
/// Copies are shallow: two Tensor handles may refer to the same storage, the
/// same way two references to one graph node would. Use clone() for a deep
/// copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of values, detached from any graph.
  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

/// Ordered list of recorded operations reachable from a root tensor.
///
/// Entries are in topological order (inputs before the op that consumes
/// them); backward replay walks them in reverse and visits each once.
class ComputationRecord {
 public:
  struct Entry {
    const char* op;
    std::size_t output;               // index into nodes()
    std::vector<std::size_t> inputs;  // indices into nodes()
  };

  static ComputationRecord trace(const Tensor& root);

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Runs every entry's backward function in reverse order.
  void replay_backward() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<Entry> entries_;
};

/// Fills grad of every requires_grad tensor reachable from `loss`.
/// Gradients accumulate across calls until cleared.
void backward(const Tensor& loss);

namespace detail {

/// Wraps freshly computed values into a tensor and, if grad mode is on and
/// any input requires grad, records `fn` as its backward step.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, std::function<void(Node&)> fn);

}  // namespace detail

}  // namespace transfer
