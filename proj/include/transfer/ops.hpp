#pragma once

// Differentiable tensor operations. Every op records its backward step when
// grad mode is on and at least one input requires grad.

#include <cstddef>
#include <span>
#include <vector>

#include "transfer/tensor.hpp"

namespace transfer {

enum class Activation { kRelu, kSigmoid, kGelu };

// Linear algebra ------------------------------------------------------------

/// [m x n] * [n x p] -> [m x p].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched product: [b x m x n] * [b x n x p] (or [b x p x n] with trans_b).
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

/// x[..., in] * w[in x out] (+ bias[out]). `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

/// Cross-correlation over [h x w x c_in] or [n x h x w x c_in] input with a
/// [k x k x c_in x c_out] kernel. k in {1, 3}, stride in {1, 2}.
Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding,
              const Tensor& bias = {});

// Nonlinearities and normalisation ------------------------------------------

Tensor activation(const Tensor& x, Activation kind);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3))).
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis = -1);

inline constexpr double kLayerNormEps = 1e-6;
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis = -1);

/// Mean over the batch of -log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

// Elementwise and reductions ------------------------------------------------

/// a + b, where b either has a's shape or a suffix of it (broadcast over the
/// leading axes).
Tensor add(const Tensor& a, const Tensor& b);

/// a * b, where b has a's rank and each of its dims equals a's or is 1.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Elementwise maximum over same-shaped tensors; the gradient goes to the
/// first input attaining the max.
Tensor elementwise_max(std::span<const Tensor> xs);

// Shape manipulation --------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> order);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order);
/// Drops `axis` by taking slice `index` along it.
Tensor select(const Tensor& x, int axis, std::size_t index);
/// Inserts a new axis and stacks same-shaped tensors along it.
Tensor stack(std::span<const Tensor> xs, int axis);
/// [n x L x d] and token [d] or [1 x d] -> [n x (L+1) x d] with the token first.
Tensor prepend_token(const Tensor& x, const Tensor& token);

std::size_t normalize_axis(int axis, std::size_t rank);

}  // namespace transfer
