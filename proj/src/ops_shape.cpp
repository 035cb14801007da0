#include <algorithm>
#include <cstdint>
#include <string>

#include "transfer/errors.hpp"
#include "transfer/ops.hpp"

namespace transfer {

using detail::Node;

namespace {

// Maps each flat index of `full` to the flat index of a same-rank tensor whose
// dims are either equal or 1.
std::vector<std::size_t> broadcast_index(const Shape& full, const Shape& small) {
  const std::size_t rank = full.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t acc = 1;
  for (std::size_t d = rank; d-- > 0;) {
    stride[d] = small[d] == 1 ? 0 : acc;
    acc *= small[d];
  }
  std::vector<std::size_t> map(shape_numel(full));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    map[i] = cur;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      cur += stride[d];
      if (idx[d] < full[d]) break;
      cur -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool suffix = sb.size() <= sa.size() && std::equal(sb.begin(), sb.end(), sa.end() - static_cast<std::ptrdiff_t>(sb.size()));
  if (!suffix)
    throw DimensionError("add: cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
  const std::size_t period = b.numel();
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i % period];
  return detail::make_result("add", sa, std::move(out), {a, b}, [period](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % period] += self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sa.size() == sb.size();
  for (std::size_t d = 0; ok && d < sa.size(); ++d) ok = sb[d] == sa[d] || sb[d] == 1;
  if (!ok) throw DimensionError("mul: cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
  std::vector<std::size_t> map;
  if (sa != sb) map = broadcast_index(sa, sb);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[map.empty() ? i : map[i]];
  return detail::make_result("mul", sa, std::move(out), {a, b}, [map = std::move(map)](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const auto bi = [&](std::size_t i) { return map.empty() ? i : map[i]; };
    if (na.requires_grad) {
      auto& g = na.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[bi(i)];
    }
    if (nb.requires_grad) {
      auto& g = nb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[bi(i)] += self.grad[i] * na.data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return detail::make_result("scale", x.shape(), std::move(out), {x}, [factor](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result("sum", {}, {total}, {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor elementwise_max(std::span<const Tensor> xs) {
  if (xs.empty()) throw UsageError("elementwise_max: empty input list");
  const Shape& shape = xs[0].shape();
  for (const auto& t : xs)
    if (t.shape() != shape)
      throw DimensionError("elementwise_max: shape " + shape_string(t.shape()) + " differs from " +
                           shape_string(shape));
  const std::size_t n = xs[0].numel();
  std::vector<double> out(xs[0].data().begin(), xs[0].data().end());
  std::vector<std::uint32_t> arg(n, 0);
  for (std::size_t k = 1; k < xs.size(); ++k) {
    const auto d = xs[k].data();
    for (std::size_t i = 0; i < n; ++i)
      if (d[i] > out[i]) {
        out[i] = d[i];
        arg[i] = static_cast<std::uint32_t>(k);
      }
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  return detail::make_result("elementwise_max", shape, std::move(out), std::move(inputs),
                             [arg = std::move(arg)](Node& self) {
    for (std::size_t i = 0; i < arg.size(); ++i) {
      Node& src = *self.inputs[arg[i]];
      if (src.requires_grad) src.ensure_grad()[i] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
  const std::size_t rank = x.rank();
  std::vector<bool> seen(rank, false);
  if (order.size() != rank) throw DimensionError("permute: order length does not match rank");
  for (std::size_t o : order) {
    if (o >= rank || seen[o]) throw DimensionError("permute: invalid axis order");
    seen[o] = true;
  }
  const Shape& in = x.shape();
  Shape out_shape(rank);
  std::vector<std::size_t> in_stride(rank);
  std::size_t acc = 1;
  for (std::size_t d = rank; d-- > 0;) {
    in_stride[d] = acc;
    acc *= in[d];
  }
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in[order[d]];
    src_stride[d] = in_stride[order[d]];
  }
  // gather map: output flat index -> input flat index
  std::vector<std::size_t> src(x.numel());
  std::vector<std::size_t> idx(rank, 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    src[i] = cur;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      cur += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      cur -= src_stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  const auto xd = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xd[src[i]];
  return detail::make_result("permute", std::move(out_shape), std::move(out), {x},
                             [src = std::move(src)](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> order) {
  return permute(x, std::span<const std::size_t>(order.begin(), order.size()));
}

Tensor select(const Tensor& x, int axis, std::size_t index) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  if (index >= x.dim(ax))
    throw std::out_of_range("select: index " + std::to_string(index) + " outside axis of size " +
                            std::to_string(x.dim(ax)));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.dim(d);
  for (std::size_t d = ax + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const std::size_t len = x.dim(ax);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
  const auto xd = x.data();
  std::vector<double> out(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * len + index) * inner), inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * inner));
  return detail::make_result("select", std::move(shape), std::move(out), {x},
                             [outer, inner, len, index](Node& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) g[(o * len + index) * inner + i] += self.grad[o * inner + i];
  });
}

Tensor stack(std::span<const Tensor> xs, int axis) {
  if (xs.empty()) throw UsageError("stack: empty input list");
  const Shape& base = xs[0].shape();
  for (const auto& t : xs)
    if (t.shape() != base)
      throw DimensionError("stack: shape " + shape_string(t.shape()) + " differs from " + shape_string(base));
  const std::size_t ax = normalize_axis(axis, base.size() + 1);
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= base[d];
  for (std::size_t d = ax; d < base.size(); ++d) inner *= base[d];
  const std::size_t count = xs.size();
  Shape shape = base;
  shape.insert(shape.begin() + static_cast<std::ptrdiff_t>(ax), count);
  std::vector<double> out(outer * count * inner);
  for (std::size_t k = 0; k < count; ++k) {
    const auto d = xs[k].data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * count + k) * inner));
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  return detail::make_result("stack", std::move(shape), std::move(out), std::move(inputs),
                             [outer, inner, count](Node& self) {
    for (std::size_t k = 0; k < count; ++k) {
      Node& src = *self.inputs[k];
      if (!src.requires_grad) continue;
      auto& g = src.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) g[o * inner + i] += self.grad[(o * count + k) * inner + i];
    }
  });
}

Tensor prepend_token(const Tensor& x, const Tensor& token) {
  if (x.rank() != 3 || token.numel() != x.dim(2))
    throw DimensionError("prepend_token: sequence " + shape_string(x.shape()) + " vs token " +
                         shape_string(token.shape()));
  const std::size_t n = x.dim(0), len = x.dim(1), d = x.dim(2);
  std::vector<double> out(n * (len + 1) * d);
  const auto xd = x.data();
  const auto td = token.data();
  for (std::size_t b = 0; b < n; ++b) {
    double* dst = out.data() + b * (len + 1) * d;
    std::copy(td.begin(), td.end(), dst);
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>(b * len * d), len * d, dst + d);
  }
  return detail::make_result("prepend_token", {n, len + 1, d}, std::move(out), {x, token},
                             [n, len, d](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nt = *self.inputs[1];
    for (std::size_t b = 0; b < n; ++b) {
      const double* src = self.grad.data() + b * (len + 1) * d;
      if (nt.requires_grad) {
        auto& g = nt.ensure_grad();
        for (std::size_t j = 0; j < d; ++j) g[j] += src[j];
      }
      if (nx.requires_grad) {
        auto& g = nx.ensure_grad();
        for (std::size_t j = 0; j < len * d; ++j) g[b * len * d + j] += src[d + j];
      }
    }
  });
}

}  // namespace transfer
