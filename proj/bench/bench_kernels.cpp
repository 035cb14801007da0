// Parallel kernels against their serial reference twins.
//
//   ./bench_kernels --benchmark_filter=Gemm
//   TRANSFER_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>

#include <vector>

#include "transfer/kernels.hpp"
#include "transfer/rng.hpp"

namespace {

using namespace transfer;

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const kernels::GemmShape s{n, n, n};
  const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (kParallel) kernels::gemm(s, a, b, c, false);
    else kernels::reference::gemm(s, a, b, c, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}

// Stem-like 3x3 convolution over a batch of NHWC maps.
template <bool kParallel>
void BM_Conv3x3(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto ch = static_cast<std::size_t>(state.range(1));
  const kernels::ConvShape s{8, hw, hw, ch, ch, 3, 1, 1};
  const auto x = random_values(s.n * hw * hw * ch, 3);
  const auto k = random_values(9 * ch * ch, 4);
  const auto bias = random_values(ch, 5);
  std::vector<double> y(s.n * s.out_h() * s.out_w() * ch);
  for (auto _ : state) {
    if constexpr (kParallel) kernels::conv2d(s, x, k, bias, y);
    else kernels::reference::conv2d(s, x, k, bias, y);
    benchmark::DoNotOptimize(y.data());
  }
}

template <bool kParallel>
void BM_Softmax(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t rows = 32 * 8 * len;  // batch x heads x tokens
  const auto x = random_values(rows * len, 6);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    if constexpr (kParallel) kernels::softmax_rows(rows, len, x, y);
    else kernels::reference::softmax_rows(rows, len, x, y);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Name("Gemm/parallel")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Name("Gemm/reference")->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_Conv3x3<true>)->Name("Conv3x3/parallel")->Args({24, 32})->Args({12, 64});
BENCHMARK(BM_Conv3x3<false>)->Name("Conv3x3/reference")->Args({24, 32})->Args({12, 64});
BENCHMARK(BM_Softmax<true>)->Name("Softmax/parallel")->Arg(37);
BENCHMARK(BM_Softmax<false>)->Name("Softmax/reference")->Arg(37);

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
