#include "transfer/optim.hpp"

#include <cmath>
#include <string>

#include "transfer/errors.hpp"

namespace transfer {

void sgd_momentum_step(std::span<Tensor> params, std::span<Tensor> velocities, double lr,
                       double momentum) {
  if (params.size() != velocities.size())
    throw UsageError("sgd_momentum_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(velocities.size()) + " velocities");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != velocities[i].shape())
      throw DimensionError("sgd_momentum_step: velocity " + shape_string(velocities[i].shape()) +
                           " does not match parameter " + shape_string(params[i].shape()));
    if (!params[i].has_grad())
      throw UsageError("sgd_momentum_step: parameter " + std::to_string(i) + " has no gradient");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto v = velocities[i].mutable_data();
    const auto g = params[i].grad();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] + g[j];
      p[j] -= lr * v[j];
    }
    params[i].zero_grad();
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& p : params)
      if (p.has_grad())
        for (double& g : p.mutable_grad()) g *= factor;
  }
  return norm;
}

}  // namespace transfer
