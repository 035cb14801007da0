#pragma once

#include <string>
#include <utility>
#include <vector>

#include "transfer/rng.hpp"
#include "transfer/serialize.hpp"
#include "transfer/tensor.hpp"

namespace transfer {

/// Ordered, named collection of trainable tensors. Order is registration
/// order, which fixes checkpoint layout and optimizer state pairing.
class ParameterSet {
 public:
  /// Registers `t` (marked requires_grad) and returns the stored handle.
  Tensor add(std::string name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  const Tensor& get(const std::string& name) const;
  std::size_t scalar_count() const;

  void zero_grad();

  /// Copies values from checkpoint tensors of the same name and shape.
  void load(const Checkpoint& ckpt);
  void append_to(Checkpoint& ckpt) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

namespace init {

/// N(0, 2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);
/// N(0, stddev^2) truncated at two standard deviations.
Tensor truncated_normal(Shape shape, double stddev, Rng& rng);
Tensor zeros(Shape shape);
Tensor ones(Shape shape);

}  // namespace init

}  // namespace transfer
