// Default (OpenMP + GEMM) kernels against their serial references, and patch
// blending with and without threaded patch evaluation.
//
//   ./bench_kernels --benchmark_filter=Conv

#include <benchmark/benchmark.h>
#include <omp.h>

#include <memory>

#include "patchdiff/estimator.hpp"
#include "patchdiff/nn/kernels.hpp"
#include "patchdiff/nn/unet.hpp"
#include "patchdiff/patch.hpp"
#include "patchdiff/rng.hpp"
#include "patchdiff/unet_estimator.hpp"

using namespace patchdiff;
using namespace patchdiff::nn;

namespace {

Tensor<float> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(n, c, h, w);
  for (float& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

// Args: batch, channels, spatial size.
void conv_args(benchmark::internal::Benchmark* b) {
  b->Args({4, 32, 32})->Args({4, 64, 16})->Args({1, 128, 64});
}

template <bool kReference>
void BM_ConvForward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), s = state.range(2);
  const auto x = random_tensor(n, c, s, s, 1);
  const auto w = random_tensor(c, c, 3, 3, 2);
  const auto bias = random_tensor(1, c, 1, 1, 3);
  for (auto _ : state) {
    auto y = kReference ? conv2d_forward_reference(x, w, bias, {1, 1}) : conv2d_forward(x, w, bias, {1, 1});
    benchmark::DoNotOptimize(y.data());
  }
  const double flops = 2.0 * n * c * c * 9.0 * s * s;
  state.counters["GFLOP/s"] = benchmark::Counter(flops, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_ConvForward<false>)->Name("ConvForward/default")->Apply(conv_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<true>)->Name("ConvForward/reference")->Apply(conv_args)->Unit(benchmark::kMillisecond);

template <bool kReference>
void BM_ConvBackward(benchmark::State& state) {
  const int n = state.range(0), c = state.range(1), s = state.range(2);
  const auto x = random_tensor(n, c, s, s, 1);
  const auto w = random_tensor(c, c, 3, 3, 2);
  const auto dy = random_tensor(n, c, s, s, 3);
  for (auto _ : state) {
    Tensor<float> dx = x.zeros_like(), dw = w.zeros_like(), db(1, c, 1, 1);
    if (kReference) {
      conv2d_backward_reference(x, w, dy, {1, 1}, &dx, &dw, &db);
    } else {
      conv2d_backward(x, w, dy, {1, 1}, &dx, &dw, &db);
    }
    benchmark::DoNotOptimize(dx.data());
  }
}
BENCHMARK(BM_ConvBackward<false>)->Name("ConvBackward/default")->Apply(conv_args)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<true>)->Name("ConvBackward/reference")->Apply(conv_args)->Unit(benchmark::kMillisecond);

template <bool kReference>
void BM_Attention(benchmark::State& state) {
  const int c = 64, s = state.range(0);
  const auto q = random_tensor(2, c, s, s, 1), k = random_tensor(2, c, s, s, 2), v = random_tensor(2, c, s, s, 3);
  Tensor<float> probs;
  for (auto _ : state) {
    auto y = kReference ? attention_forward_reference(q, k, v) : attention_forward(q, k, v, probs);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(BM_Attention<false>)->Name("Attention/default")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Attention<true>)->Name("Attention/reference")->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

// One blended noise estimate over a 64x64 image with a small network on a
// 32-pixel grid (9 patches). Arg: OpenMP threads (0 = serial reference path).
void BM_BlendNoise(benchmark::State& state) {
  UNetConfig cfg;
  cfg.patch_size = 32;
  cfg.base_channels = 32;
  cfg.channel_multipliers = {1, 2};
  cfg.num_res_blocks = 1;
  cfg.groupnorm_groups = 8;
  cfg.time_embed_dim = 128;
  auto model = std::make_shared<UNet<float>>(cfg, 1);
  const UNetEstimator<float> est(model);
  Rng rng(2);
  const ImageTensor x = normal_image(64, 64, 3, rng), cond = normal_image(64, 64, 3, rng);
  const PatchGrid grid = build_grid(64, 64, 32, 16);
  const int threads = static_cast<int>(state.range(0));
  const int saved = omp_get_max_threads();
  if (threads > 0) omp_set_num_threads(threads);
  for (auto _ : state) {
    ImageTensor out = threads == 0 ? blend_noise_reference(est, x, cond, grid, 500)
                                   : blend_noise(est, x, cond, grid, 500, {64, true});
    benchmark::DoNotOptimize(out.values().data());
  }
  omp_set_num_threads(saved);
}
BENCHMARK(BM_BlendNoise)->Name("BlendNoise/threads")->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
