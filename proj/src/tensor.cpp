#include "transfer/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_map>

#include "transfer/errors.hpp"

namespace transfer {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

double Tensor::item() const {
  if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->data); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

ComputationRecord ComputationRecord::trace(const Tensor& root) {
  ComputationRecord rec;
  if (!root.defined()) return rec;
  std::unordered_map<const detail::Node*, std::size_t> index;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  std::unordered_map<const detail::Node*, bool> visiting;
  const auto visit = [&](const std::shared_ptr<detail::Node>& n) {
    if (index.count(n.get()) || visiting.count(n.get())) return false;
    visiting[n.get()] = true;
    stack.emplace_back(n.get(), 0);
    return true;
  };
  std::unordered_map<const detail::Node*, std::shared_ptr<detail::Node>> owner;
  owner[root.node().get()] = root.node();
  visit(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const auto& in = node->inputs[next++];
      owner.emplace(in.get(), in);
      visit(in);
      continue;
    }
    const std::size_t id = rec.nodes_.size();
    index[node] = id;
    rec.nodes_.push_back(owner.at(node));
    if (node->backward) {
      Entry e{node->op, id, {}};
      for (const auto& in : node->inputs) e.inputs.push_back(index.at(in.get()));
      rec.entries_.push_back(std::move(e));
    }
    stack.pop_back();
  }
  return rec;
}

void ComputationRecord::replay_backward() const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    detail::Node& n = *nodes_[it->output];
    // Nodes nothing flowed into still run, so every reachable leaf ends up
    // with a (zero) gradient.
    n.ensure_grad();
    n.backward(n);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  const auto record = ComputationRecord::trace(loss);
  loss.node()->ensure_grad()[0] += 1.0;
  record.replay_backward();
}

Tensor detail::make_result(const char* op, Shape shape, std::vector<double> data,
                           std::vector<Tensor> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

}  // namespace transfer
