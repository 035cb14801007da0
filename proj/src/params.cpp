#include "transfer/params.hpp"

#include <cmath>

#include "transfer/errors.hpp"

namespace transfer {

Tensor ParameterSet::add(std::string name, Tensor t) {
  for (const auto& [n, _] : entries_)
    if (n == name) throw UsageError("duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.emplace_back(std::move(name), t);
  return t;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw UsageError("no parameter named " + name);
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.second.numel();
  return total;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

void ParameterSet::load(const Checkpoint& ckpt) {
  for (auto& [name, t] : entries_) {
    const Tensor& src = ckpt.tensor(name);
    if (src.shape() != t.shape())
      throw DataError("checkpoint tensor " + name + " has shape " + shape_string(src.shape()) +
                      ", model expects " + shape_string(t.shape()));
    auto dst = t.mutable_data();
    std::copy(src.data().begin(), src.data().end(), dst.begin());
  }
}

void ParameterSet::append_to(Checkpoint& ckpt) const {
  for (const auto& [name, t] : entries_) ckpt.tensors.emplace_back(name, t.clone());
}

namespace init {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v));
}

Tensor truncated_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.truncated_normal(stddev);
  return Tensor(std::move(shape), std::move(v));
}

Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

}  // namespace init
}  // namespace transfer
