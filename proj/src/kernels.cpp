#include "transfer/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

namespace transfer::kernels {
namespace {

// Register tile: kTileRows x kTileCols doubles of C held in vector registers.
constexpr std::size_t kTileRows = 6;
constexpr std::size_t kTileCols = 16;
constexpr std::size_t kDepthBlock = 256;

typedef double v8d __attribute__((vector_size(64)));
typedef double v8d_unaligned __attribute__((vector_size(64), aligned(8)));

// Element (i, k) of op(A) lives at a[i * row_stride + k * depth_stride].
struct StridedA {
  const double* a;
  std::size_t row_stride;
  std::size_t depth_stride;
};

// C[R x cols] += op(A)[rows i0.., depth k0..k0+kc) * packed B panel [kc x 16].
template <std::size_t R>
void micro_kernel(const StridedA& a, std::size_t i0, std::size_t k0, std::size_t kc, const double* panel,
                  double* c, std::size_t ldc, std::size_t cols) {
  v8d lo[R];
  v8d hi[R];
  for (std::size_t r = 0; r < R; ++r) {
    lo[r] = v8d{};
    hi[r] = v8d{};
  }
  const double* arow = a.a + i0 * a.row_stride + k0 * a.depth_stride;
  for (std::size_t k = 0; k < kc; ++k) {
    const v8d b0 = *reinterpret_cast<const v8d_unaligned*>(panel + k * kTileCols);
    const v8d b1 = *reinterpret_cast<const v8d_unaligned*>(panel + k * kTileCols + 8);
    const double* ak = arow + k * a.depth_stride;
    for (std::size_t r = 0; r < R; ++r) {
      const double av = ak[r * a.row_stride];
      lo[r] += av * b0;
      hi[r] += av * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    double* crow = c + r * ldc;
    if (cols == kTileCols) {
      *reinterpret_cast<v8d_unaligned*>(crow) += lo[r];
      *reinterpret_cast<v8d_unaligned*>(crow + 8) += hi[r];
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] += j < 8 ? lo[r][j] : hi[r][j - 8];
    }
  }
}

void dispatch_rows(std::size_t rows, const StridedA& a, std::size_t i0, std::size_t k0, std::size_t kc,
                   const double* panel, double* c, std::size_t ldc, std::size_t cols) {
  switch (rows) {
    case 6: micro_kernel<6>(a, i0, k0, kc, panel, c, ldc, cols); break;
    case 5: micro_kernel<5>(a, i0, k0, kc, panel, c, ldc, cols); break;
    case 4: micro_kernel<4>(a, i0, k0, kc, panel, c, ldc, cols); break;
    case 3: micro_kernel<3>(a, i0, k0, kc, panel, c, ldc, cols); break;
    case 2: micro_kernel<2>(a, i0, k0, kc, panel, c, ldc, cols); break;
    case 1: micro_kernel<1>(a, i0, k0, kc, panel, c, ldc, cols); break;
    default: break;
  }
}

// Packs op(B)[k0..k0+kc) x [0, p) into zero-padded 16-wide column panels.
void pack_b(const GemmShape& s, const double* b, std::size_t k0, std::size_t kc, double* out) {
  const std::size_t panels = (s.p + kTileCols - 1) / kTileCols;
  for (std::size_t jp = 0; jp < panels; ++jp) {
    double* dst = out + jp * kc * kTileCols;
    const std::size_t j0 = jp * kTileCols;
    const std::size_t cols = std::min(kTileCols, s.p - j0);
    for (std::size_t k = 0; k < kc; ++k) {
      double* d = dst + k * kTileCols;
      std::size_t j = 0;
      if (s.trans_b) {
        for (; j < cols; ++j) d[j] = b[(j0 + j) * s.n + k0 + k];
      } else {
        const double* src = b + (k0 + k) * s.p + j0;
        for (; j < cols; ++j) d[j] = src[j];
      }
      for (; j < kTileCols; ++j) d[j] = 0.0;
    }
  }
}

void gemm_impl(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate,
               bool parallel) {
  if (!accumulate) std::fill(c, c + s.m * s.p, 0.0);
  if (s.m == 0 || s.p == 0 || s.n == 0) return;
  const StridedA sa = s.trans_a ? StridedA{a, 1, s.m} : StridedA{a, s.n, 1};
  const std::size_t panels = (s.p + kTileCols - 1) / kTileCols;
  const std::size_t row_tiles = (s.m + kTileRows - 1) / kTileRows;
  const auto tiles = static_cast<std::ptrdiff_t>(row_tiles * panels);
  std::vector<double> packed(std::min(kDepthBlock, s.n) * panels * kTileCols);
  for (std::size_t k0 = 0; k0 < s.n; k0 += kDepthBlock) {
    const std::size_t kc = std::min(kDepthBlock, s.n - k0);
    pack_b(s, b, k0, kc, packed.data());
#pragma omp parallel for schedule(static) if (parallel && s.m * kc * s.p > 65536)
    for (std::ptrdiff_t t = 0; t < tiles; ++t) {
      const std::size_t rt = static_cast<std::size_t>(t) / panels;
      const std::size_t jp = static_cast<std::size_t>(t) % panels;
      const std::size_t i0 = rt * kTileRows;
      const std::size_t j0 = jp * kTileCols;
      dispatch_rows(std::min(kTileRows, s.m - i0), sa, i0, k0, kc, packed.data() + jp * kc * kTileCols,
                    c + i0 * s.p + j0, s.p, std::min(kTileCols, s.p - j0));
    }
  }
}

}  // namespace

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  gemm_impl(s, a.data(), b.data(), c.data(), accumulate, true);
}

void batched_gemm(std::size_t batch, const GemmShape& s, std::span<const double> a,
                  std::span<const double> b, std::span<double> c, bool accumulate) {
  const std::size_t sa = s.m * s.n;
  const std::size_t sb = s.n * s.p;
  const std::size_t sc = s.m * s.p;
  // Small per-batch problems: parallelise across the batch, serial inside.
  const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel for schedule(static) if (batch > 1 && batch * sc * s.n > 32768)
  for (std::ptrdiff_t i = 0; i < nb; ++i) {
    const auto u = static_cast<std::size_t>(i);
    gemm_impl(s, a.data() + u * sa, b.data() + u * sb, c.data() + u * sc, accumulate, false);
  }
}

void im2col(const ConvShape& s, std::span<const double> x, std::span<double> col) {
  const std::size_t oh = s.out_h();
  const std::size_t ow = s.out_w();
  const std::size_t patch = s.patch();
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(s.n * oh);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    const std::size_t b = static_cast<std::size_t>(r) / oh;
    const std::size_t oy = static_cast<std::size_t>(r) % oh;
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* dst = col.data() + ((b * oh + oy) * ow + ox) * patch;
      for (std::size_t ky = 0; ky < s.k; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
        for (std::size_t kx = 0; kx < s.k; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
          double* d = dst + (ky * s.k + kx) * s.c_in;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.h) ||
              ix >= static_cast<std::ptrdiff_t>(s.w)) {
            std::fill(d, d + s.c_in, 0.0);
          } else {
            const double* src = x.data() + ((b * s.h + static_cast<std::size_t>(iy)) * s.w +
                                            static_cast<std::size_t>(ix)) * s.c_in;
            std::copy(src, src + s.c_in, d);
          }
        }
      }
    }
  }
}

void col2im(const ConvShape& s, std::span<const double> col, std::span<double> dx) {
  const std::size_t oh = s.out_h();
  const std::size_t ow = s.out_w();
  const std::size_t patch = s.patch();
  // Patches overlap within an image, so only the batch axis is split.
  const std::ptrdiff_t nb = static_cast<std::ptrdiff_t>(s.n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < nb; ++bi) {
    const auto b = static_cast<std::size_t>(bi);
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double* src = col.data() + ((b * oh + oy) * ow + ox) * patch;
        for (std::size_t ky = 0; ky < s.k; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(s.h)) continue;
          for (std::size_t kx = 0; kx < s.k; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(s.w)) continue;
            const double* sp = src + (ky * s.k + kx) * s.c_in;
            double* d = dx.data() + ((b * s.h + static_cast<std::size_t>(iy)) * s.w +
                                     static_cast<std::size_t>(ix)) * s.c_in;
            for (std::size_t ci = 0; ci < s.c_in; ++ci) d[ci] += sp[ci];
          }
        }
      }
    }
  }
}

void conv2d(const ConvShape& s, std::span<const double> x, std::span<const double> kernel,
            std::span<const double> bias, std::span<double> y) {
  const std::size_t rows = s.n * s.out_h() * s.out_w();
  const GemmShape g{rows, s.patch(), s.c_out, false, false};
  if (s.k == 1 && s.stride == 1 && s.pad == 0) {
    gemm(g, x, kernel, y, false);
  } else {
    std::vector<double> col(rows * s.patch());
    im2col(s, x, col);
    gemm(g, col, kernel, y, false);
  }
  if (!bias.empty()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t co = 0; co < s.c_out; ++co) y[r * s.c_out + co] += bias[co];
  }
}

void softmax_rows(std::size_t rows, std::size_t len, std::span<const double> x,
                  std::span<double> y) {
  const std::ptrdiff_t nr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (rows * len > 16384)
  for (std::ptrdiff_t r = 0; r < nr; ++r) {
    const double* xr = x.data() + static_cast<std::size_t>(r) * len;
    double* yr = y.data() + static_cast<std::size_t>(r) * len;
    const double mx = *std::max_element(xr, xr + len);
    double sum = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < len; ++j) yr[j] *= inv;
  }
}

namespace reference {

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.p; ++j) {
      double acc = accumulate ? c[i * s.p + j] : 0.0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const double av = s.trans_a ? a[k * s.m + i] : a[i * s.n + k];
        const double bv = s.trans_b ? b[j * s.n + k] : b[k * s.p + j];
        acc += av * bv;
      }
      c[i * s.p + j] = acc;
    }
  }
}

void conv2d(const ConvShape& s, std::span<const double> x, std::span<const double> kernel,
            std::span<const double> bias, std::span<double> y) {
  const std::size_t oh = s.out_h();
  const std::size_t ow = s.out_w();
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < s.c_out; ++co) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ky = 0; ky < s.k; ++ky)
            for (std::size_t kx = 0; kx < s.k; ++kx)
              for (std::size_t ci = 0; ci < s.c_in; ++ci) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
                const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.h) ||
                    ix >= static_cast<std::ptrdiff_t>(s.w))
                  continue;
                acc += x[((b * s.h + static_cast<std::size_t>(iy)) * s.w + static_cast<std::size_t>(ix)) * s.c_in + ci] *
                       kernel[((ky * s.k + kx) * s.c_in + ci) * s.c_out + co];
              }
          y[((b * oh + oy) * ow + ox) * s.c_out + co] = acc;
        }
}

void softmax_rows(std::size_t rows, std::size_t len, std::span<const double> x,
                  std::span<double> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, x[r * len + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < len; ++j) sum += std::exp(x[r * len + j] - mx);
    for (std::size_t j = 0; j < len; ++j) y[r * len + j] = std::exp(x[r * len + j] - mx) / sum;
  }
}

}  // namespace reference

void configure_threads_from_env() {
  if (const char* env = std::getenv("TRANSFER_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) omp_set_num_threads(n);
    } catch (const std::exception&) {
      // Ignore malformed values; the runtime default stays in place.
    }
  }
}

}  // namespace transfer::kernels
