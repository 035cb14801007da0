#pragma once

#include <span>

#include "transfer/tensor.hpp"

namespace transfer {

/// Heavy-ball SGD: v <- momentum * v + grad; p <- p - lr * v; grads cleared.
///
/// Every parameter must carry a gradient (UsageError otherwise), and each
/// velocity must match its parameter's shape.
void sgd_momentum_step(std::span<Tensor> params, std::span<Tensor> velocities, double lr,
                       double momentum);

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm` (no-op when max_norm <= 0). Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace transfer
