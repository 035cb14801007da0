#include <cmath>
#include <numbers>
#include <string>

#include "transfer/errors.hpp"
#include "transfer/kernels.hpp"
#include "transfer/ops.hpp"

namespace transfer {

using detail::Node;

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

std::size_t normalize_axis(int axis, std::size_t rank) {
  const auto r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  return detail::make_result("relu", x.shape(), std::move(out), {x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& g = nx.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (nx.data[i] > 0.0) g[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xd[i]));
  return detail::make_result("sigmoid", x.shape(), std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return detail::make_result("gelu", x.shape(), std::move(out), {x}, [](Node& self) {
    Node& nx = *self.inputs[0];
    auto& g = nx.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = nx.data[i];
      const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kGelu: return gelu(x);
  }
  throw ConfigError("unknown activation");
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  std::vector<double> out(x.numel());
  if (s.inner == 1) {
    kernels::softmax_rows(s.outer, s.len, x.data(), out);
  } else {
    const auto xd = x.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double mx = xd[base];
        for (std::size_t j = 1; j < s.len; ++j) mx = std::max(mx, xd[base + j * s.inner]);
        double total = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          out[base + j * s.inner] = std::exp(xd[base + j * s.inner] - mx);
          total += out[base + j * s.inner];
        }
        for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
      }
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [s](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t i = base + j * s.inner;
          dot += self.grad[i] * self.data[i];
        }
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t i = base + j * s.inner;
          g[i] += self.data[i] * (self.grad[i] - dot);
        }
      }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const AxisSplit s = split_axis(x.shape(), ax);
  if (gain.numel() != s.len || bias.numel() != s.len)
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                         shape_string(bias.shape()) + " do not match axis length " + std::to_string(s.len));
  const std::size_t groups = s.outer * s.inner;
  // Cache normalised values and inverse stddev for the backward pass.
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(groups);
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mu = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) mu += xd[base + j * s.inner];
      mu /= static_cast<double>(s.len);
      double var = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double d = xd[base + j * s.inner] - mu;
        var += d * d;
      }
      var /= static_cast<double>(s.len);
      const double is = 1.0 / std::sqrt(var + kLayerNormEps);
      inv_std[o * s.inner + in] = is;
      for (std::size_t j = 0; j < s.len; ++j) {
        const std::size_t i = base + j * s.inner;
        xhat[i] = (xd[i] - mu) * is;
        out[i] = gd[j] * xhat[i] + bd[j];
      }
    }
  return detail::make_result("layer_norm", x.shape(), std::move(out), {x, gain, bias},
                             [s, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    Node& nx = *self.inputs[0];
    Node& ng = *self.inputs[1];
    Node& nb = *self.inputs[2];
    const auto n = static_cast<double>(s.len);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        if (ng.requires_grad || nb.requires_grad) {
          auto& gg = ng.requires_grad ? ng.ensure_grad() : ng.grad;
          auto& gb = nb.requires_grad ? nb.ensure_grad() : nb.grad;
          for (std::size_t j = 0; j < s.len; ++j) {
            const std::size_t i = base + j * s.inner;
            if (ng.requires_grad) gg[j] += self.grad[i] * xhat[i];
            if (nb.requires_grad) gb[j] += self.grad[i];
          }
        }
        if (!nx.requires_grad) continue;
        double mean_d = 0.0;
        double mean_dx = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t i = base + j * s.inner;
          const double d = self.grad[i] * ng.data[j];
          mean_d += d;
          mean_dx += d * xhat[i];
        }
        mean_d /= n;
        mean_dx /= n;
        auto& gx = nx.ensure_grad();
        const double is = inv_std[o * s.inner + in];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t i = base + j * s.inner;
          const double d = self.grad[i] * ng.data[j];
          gx[i] += is * (d - mean_d - xhat[i] * mean_dx);
        }
      }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= classes)
      throw std::out_of_range("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                              std::to_string(classes) + ")");
  std::vector<double> probs(logits.numel());
  kernels::softmax_rows(n, classes, logits.data(), probs);
  const auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // log-sum-exp form keeps large margins finite
    const double* row = ld.data() + i * classes;
    double mx = row[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    loss += mx + std::log(total) - row[labels[i]];
  }
  loss /= static_cast<double>(n);
  std::vector<int> label_copy(labels.begin(), labels.end());
  return detail::make_result("cross_entropy", {}, {loss}, {logits},
                             [n, classes, probs = std::move(probs), label_copy = std::move(label_copy)](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const double scale_factor = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < classes; ++c) {
        const double target = static_cast<int>(c) == label_copy[i] ? 1.0 : 0.0;
        g[i * classes + c] += scale_factor * (probs[i * classes + c] - target);
      }
  });
}

}  // namespace transfer
