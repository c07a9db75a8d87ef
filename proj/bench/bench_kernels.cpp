#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "ckm/numerics/kernels.hpp"

// Parallel kernels against their serial references on the shapes the denoiser
// actually runs (latent 16x16 and 8x8 feature maps, 64-128 channels).

using namespace ckm::nd;

namespace {

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

void gemm_args(benchmark::internal::Benchmark* b) {
  for (int n : {64, 128, 256}) b->Args({n, n, n});
  b->Args({128, 576, 256});  // conv-as-gemm: O x (C*9) x (H*W)
}

void BM_GemmReference(benchmark::State& state) {
  const auto m = state.range(0), k = state.range(1), n = state.range(2);
  const auto a = random_buffer(m * k, 1), b = random_buffer(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    kernels::reference::gemm(a, b, c, m, k, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

void BM_GemmParallel(benchmark::State& state) {
  const auto m = state.range(0), k = state.range(1), n = state.range(2);
  const auto a = random_buffer(m * k, 1), b = random_buffer(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    kernels::gemm(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

kernels::ConvGeometry conv_geometry(const benchmark::State& state) {
  kernels::ConvGeometry g;
  g.batch = 5;
  g.in_channels = g.out_channels = state.range(0);
  g.height = g.width = state.range(1);
  return g;
}

void BM_ConvForwardReference(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_buffer(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_buffer(g.out_channels * g.in_channels * 9, 4);
  const auto bias = random_buffer(g.out_channels, 5);
  std::vector<double> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    kernels::reference::conv2d_forward(g, x, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvForwardParallel(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_buffer(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_buffer(g.out_channels * g.in_channels * 9, 4);
  const auto bias = random_buffer(g.out_channels, 5);
  std::vector<double> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    kernels::conv2d_forward(g, x, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvBackwardReference(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_buffer(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_buffer(g.out_channels * g.in_channels * 9, 4);
  const auto go = random_buffer(g.batch * g.out_channels * g.out_height() * g.out_width(), 6);
  std::vector<double> gx(x.size()), gw(w.size()), gb(g.out_channels);
  for (auto _ : state) {
    kernels::reference::conv2d_backward(g, x, w, go, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
}

void BM_ConvBackwardParallel(benchmark::State& state) {
  const auto g = conv_geometry(state);
  const auto x = random_buffer(g.batch * g.in_channels * g.height * g.width, 3);
  const auto w = random_buffer(g.out_channels * g.in_channels * 9, 4);
  const auto go = random_buffer(g.batch * g.out_channels * g.out_height() * g.out_width(), 6);
  std::vector<double> gx(x.size()), gw(w.size()), gb(g.out_channels);
  for (auto _ : state) {
    kernels::conv2d_backward(g, x, w, go, gx, gw, gb);
    benchmark::DoNotOptimize(gx.data());
  }
}

void BM_SoftmaxReference(benchmark::State& state) {
  const auto rows = state.range(0), cols = state.range(1);
  const auto x = random_buffer(rows * cols, 7);
  std::vector<double> out(x.size());
  for (auto _ : state) {
    kernels::reference::softmax_rows(x, out, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_SoftmaxParallel(benchmark::State& state) {
  const auto rows = state.range(0), cols = state.range(1);
  const auto x = random_buffer(rows * cols, 7);
  std::vector<double> out(x.size());
  for (auto _ : state) {
    kernels::softmax_rows(x, out, rows, cols);
    benchmark::DoNotOptimize(out.data());
  }
}

void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({64, 16})->Args({128, 8});
}

}  // namespace

BENCHMARK(BM_GemmReference)->Apply(gemm_args);
BENCHMARK(BM_GemmParallel)->Apply(gemm_args);
BENCHMARK(BM_ConvForwardReference)->Apply(conv_args);
BENCHMARK(BM_ConvForwardParallel)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardReference)->Apply(conv_args);
BENCHMARK(BM_ConvBackwardParallel)->Apply(conv_args);
BENCHMARK(BM_SoftmaxReference)->Args({320, 160})->Args({320, 320});
BENCHMARK(BM_SoftmaxParallel)->Args({320, 160})->Args({320, 320});

BENCHMARK_MAIN();
