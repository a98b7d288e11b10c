#include <benchmark/benchmark.h>

#include <random>

#include "lfg/nn/kernels.hpp"

namespace {

using lfg::nn::Shape;
using lfg::nn::Tensor;
namespace k = lfg::nn::kernels;

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Args: batch, in channels, out channels, spatial size.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({6, 16, 32, 32})->Args({6, 64, 128, 8})->Args({16, 8, 16, 64});
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const int n = state.range(0), ci = state.range(1), co = state.range(2), hw = state.range(3);
  const Tensor x = random_tensor({n, ci, hw, hw}, 1);
  const Tensor w = random_tensor({co, ci, 3, 3}, 2);
  const k::ConvGeometry g{3, 3, 1, 1};
  Tensor y;
  for (auto _ : state) {
    if constexpr (Reference) k::conv2d_forward_reference(x, w, {}, g, y);
    else k::conv2d_forward(x, w, {}, g, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  const int n = state.range(0), ci = state.range(1), co = state.range(2), hw = state.range(3);
  const Tensor x = random_tensor({n, ci, hw, hw}, 1);
  const Tensor w = random_tensor({co, ci, 3, 3}, 2);
  const Tensor gy = random_tensor({n, co, hw, hw}, 3);
  const k::ConvGeometry g{3, 3, 1, 1};
  Tensor gx(x.shape()), gw(w.shape());
  for (auto _ : state) {
    if constexpr (Reference) k::conv2d_backward_reference(x, w, g, gy, &gx, &gw, {});
    else k::conv2d_backward(x, w, g, gy, &gx, &gw, {});
    benchmark::DoNotOptimize(gw.data());
  }
  state.SetItemsProcessed(state.iterations() * n);
}

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/openmp")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Apply(conv_args);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/openmp")->Apply(conv_args);

}  // namespace

BENCHMARK_MAIN();
