#include <string>

#include "transfer/errors.hpp"
#include "transfer/kernels.hpp"
#include "transfer/ops.hpp"

namespace transfer {

using detail::Node;

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  std::vector<double> out(m * p);
  kernels::gemm({m, n, p, false, false}, a.data(), b.data(), out, false);
  return detail::make_result("matmul", {m, p}, std::move(out), {a, b}, [m, n, p](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad)  // dA = dC * B^T
      kernels::gemm({m, p, n, false, true}, self.grad, nb.data, na.ensure_grad(), true);
    if (nb.requires_grad)  // dB = A^T * dC
      kernels::gemm({n, m, p, true, false}, na.data, self.grad, nb.ensure_grad(), true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  const bool ok = a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) &&
                  a.dim(2) == (trans_b ? b.dim(2) : b.dim(1));
  if (!ok)
    throw DimensionError("bmm: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()) + (trans_b ? " (transposed)" : ""));
  const std::size_t batch = a.dim(0), m = a.dim(1), n = a.dim(2);
  const std::size_t p = trans_b ? b.dim(1) : b.dim(2);
  std::vector<double> out(batch * m * p);
  kernels::batched_gemm(batch, {m, n, p, false, trans_b}, a.data(), b.data(), out, false);
  return detail::make_result("bmm", {batch, m, p}, std::move(out), {a, b},
                             [batch, m, n, p, trans_b](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (na.requires_grad) {
      // dA = dC * op(B)^T
      kernels::batched_gemm(batch, {m, p, n, false, !trans_b}, self.grad, nb.data,
                            na.ensure_grad(), true);
    }
    if (nb.requires_grad) {
      if (trans_b)  // B stored p x n: dB = dC^T * A
        kernels::batched_gemm(batch, {p, m, n, true, false}, self.grad, na.data, nb.ensure_grad(), true);
      else  // dB = A^T * dC
        kernels::batched_gemm(batch, {n, m, p, true, false}, na.data, self.grad, nb.ensure_grad(), true);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (x.rank() < 1 || w.rank() != 2 || x.shape().back() != w.dim(0))
    throw DimensionError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  const std::size_t in = w.dim(0), out_dim = w.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != out_dim)
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  const std::size_t rows = x.numel() / in;
  std::vector<double> out(rows * out_dim);
  kernels::gemm({rows, in, out_dim, false, false}, x.data(), w.data(), out, false);
  if (has_bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += b[j];
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result("linear", std::move(shape), std::move(out), std::move(inputs),
                             [rows, in, out_dim, has_bias](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nw = *self.inputs[1];
    if (nx.requires_grad)
      kernels::gemm({rows, out_dim, in, false, true}, self.grad, nw.data, nx.ensure_grad(), true);
    if (nw.requires_grad)
      kernels::gemm({in, rows, out_dim, true, false}, nx.data, self.grad, nw.ensure_grad(), true);
    if (has_bias && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += self.grad[r * out_dim + j];
    }
  });
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding,
              const Tensor& bias) {
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1))
    throw DimensionError("conv2d: kernel must be k x k x c_in x c_out, got " +
                         shape_string(kernel.shape()));
  const std::size_t k = kernel.dim(0);
  if (k != 1 && k != 3) throw ConfigError("conv2d: unsupported kernel size " + std::to_string(k));
  if (stride != 1 && stride != 2) throw ConfigError("conv2d: unsupported stride " + std::to_string(stride));
  const bool batched = x.rank() == 4;
  if (!batched && x.rank() != 3)
    throw DimensionError("conv2d: input must be h x w x c or n x h x w x c, got " +
                         shape_string(x.shape()));
  kernels::ConvShape s;
  s.n = batched ? x.dim(0) : 1;
  s.h = x.dim(batched ? 1 : 0);
  s.w = x.dim(batched ? 2 : 1);
  s.c_in = x.dim(batched ? 3 : 2);
  s.c_out = kernel.dim(3);
  s.k = k;
  s.stride = stride;
  s.pad = padding;
  if (kernel.dim(2) != s.c_in)
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " has " +
                         std::to_string(s.c_in) + " channels but kernel " +
                         shape_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(2)));
  if (s.h + 2 * padding < k || s.w + 2 * padding < k)
    throw DimensionError("conv2d: input " + shape_string(x.shape()) + " smaller than kernel");
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != s.c_out)
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match c_out " +
                         std::to_string(s.c_out));

  const std::size_t oh = s.out_h(), ow = s.out_w();
  std::vector<double> out(s.n * oh * ow * s.c_out);
  kernels::conv2d(s, x.data(), kernel.data(), has_bias ? bias.data() : std::span<const double>{}, out);
  Shape shape = batched ? Shape{s.n, oh, ow, s.c_out} : Shape{oh, ow, s.c_out};
  std::vector<Tensor> inputs{x, kernel};
  if (has_bias) inputs.push_back(bias);
  return detail::make_result("conv2d", std::move(shape), std::move(out), std::move(inputs),
                             [s, has_bias](Node& self) {
    Node& nx = *self.inputs[0];
    Node& nk = *self.inputs[1];
    const std::size_t rows = s.n * s.out_h() * s.out_w();
    const std::size_t patch = s.patch();
    const bool pointwise = s.k == 1 && s.stride == 1 && s.pad == 0;
    std::vector<double> col;
    std::span<const double> cols = nx.data;
    if (!pointwise && nk.requires_grad) {
      col.resize(rows * patch);
      kernels::im2col(s, nx.data, col);
      cols = col;
    }
    if (nk.requires_grad)
      kernels::gemm({patch, rows, s.c_out, true, false}, cols, self.grad, nk.ensure_grad(), true);
    if (nx.requires_grad) {
      if (pointwise) {
        kernels::gemm({rows, s.c_out, patch, false, true}, self.grad, nk.data, nx.ensure_grad(), true);
      } else {
        std::vector<double> dcol(rows * patch);
        kernels::gemm({rows, s.c_out, patch, false, true}, self.grad, nk.data, dcol, false);
        kernels::col2im(s, dcol, nx.ensure_grad());
      }
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t co = 0; co < s.c_out; ++co) gb[co] += self.grad[r * s.c_out + co];
    }
  });
}

}  // namespace transfer
