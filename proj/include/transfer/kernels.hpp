#pragma once

// Dense numeric kernels behind the tensor ops.
//
// Every kernel in `transfer::kernels` has a serial twin in
// `transfer::kernels::reference` written as the plainest possible loop nest.
// The parallel versions split work over disjoint output ranges only, so the
// result never depends on the thread count.

#include <cstddef>
#include <span>

namespace transfer::kernels {

/// Row-major matrix view dimensions for C[m x p] = op(A)[m x n] * op(B)[n x p].
struct GemmShape {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t p = 0;
  bool trans_a = false;  // A stored as n x m
  bool trans_b = false;  // B stored as p x n
};

/// C (+)= op(A) * op(B).
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

/// `batch` independent GEMMs laid out back to back.
void batched_gemm(std::size_t batch, const GemmShape& s, std::span<const double> a,
                  std::span<const double> b, std::span<double> c, bool accumulate);

struct ConvShape {
  std::size_t n = 1;  // batch
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t k = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t out_h() const { return (h + 2 * pad - k) / stride + 1; }
  std::size_t out_w() const { return (w + 2 * pad - k) / stride + 1; }
  std::size_t patch() const { return k * k * c_in; }
};

/// NHWC input -> rows (n, oy, ox) x cols (ky, kx, ci) patch matrix.
void im2col(const ConvShape& s, std::span<const double> x, std::span<double> col);

/// Scatter-add of a patch matrix back into an NHWC gradient buffer.
void col2im(const ConvShape& s, std::span<const double> col, std::span<double> dx);

/// y[n, oy, ox, co] = sum x * kernel[ky, kx, ci, co] (+ bias[co]).
void conv2d(const ConvShape& s, std::span<const double> x, std::span<const double> kernel,
            std::span<const double> bias, std::span<double> y);

/// Softmax over contiguous rows of length `len`.
void softmax_rows(std::size_t rows, std::size_t len, std::span<const double> x,
                  std::span<double> y);

namespace reference {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

void conv2d(const ConvShape& s, std::span<const double> x, std::span<const double> kernel,
            std::span<const double> bias, std::span<double> y);

void softmax_rows(std::size_t rows, std::size_t len, std::span<const double> x,
                  std::span<double> y);

}  // namespace reference

/// Applies the TRANSFER_THREADS cap (if set) to the OpenMP runtime.
void configure_threads_from_env();

}  // namespace transfer::kernels
