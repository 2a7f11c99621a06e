#include <benchmark/benchmark.h>

#include "xmid/layers.hpp"

namespace {

using namespace xmid;

// Dominant shapes from the two architecture families at 64x96 inputs.
void conv_args(benchmark::internal::Benchmark* b) {
    // batch, in_ch, out_ch, h, w
    b->Args({32, 1, 16, 64, 96});
    b->Args({32, 16, 16, 64, 96});
    b->Args({32, 16, 32, 32, 48});
    b->Args({32, 32, 32, 32, 48});
    b->Args({32, 8, 8, 64, 96});
    b->Args({32, 16, 8, 32, 48});
}

double conv_flops(const benchmark::State& state) {
    const double macs = static_cast<double>(state.range(0)) * state.range(1) * state.range(2) *
                        state.range(3) * state.range(4) * 9.0;
    return 2.0 * macs;
}

void BM_conv3x3_forward(benchmark::State& state) {
    SeededRng rng(1);
    Conv2d<float> conv(static_cast<int>(state.range(1)), static_cast<int>(state.range(2)), 3, rng);
    Tensor<float> input = rng_normal<float>(
        rng, {state.range(0), state.range(1), state.range(3), state.range(4)}, 0.f, 1.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.forward(input));
    }
    state.counters["GFLOP/s"] = benchmark::Counter(conv_flops(state) * state.iterations() * 1e-9,
                                                   benchmark::Counter::kIsRate);
}
BENCHMARK(BM_conv3x3_forward)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_conv3x3_backward(benchmark::State& state) {
    SeededRng rng(1);
    Conv2d<float> conv(static_cast<int>(state.range(1)), static_cast<int>(state.range(2)), 3, rng);
    Tensor<float> input = rng_normal<float>(
        rng, {state.range(0), state.range(1), state.range(3), state.range(4)}, 0.f, 1.f);
    Tensor<float> grad = rng_normal<float>(
        rng, {state.range(0), state.range(2), state.range(3), state.range(4)}, 0.f, 1.f);
    (void)conv.forward(input);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv.backward(grad));
    }
    state.counters["GFLOP/s"] = benchmark::Counter(2.0 * conv_flops(state) * state.iterations() *
                                                       1e-9,
                                                   benchmark::Counter::kIsRate);
}
BENCHMARK(BM_conv3x3_backward)->Apply(conv_args)->Unit(benchmark::kMillisecond);

void BM_batchnorm_forward(benchmark::State& state) {
    SeededRng rng(1);
    BatchNorm<float> bn(16);
    Tensor<float> input = rng_normal<float>(rng, {32, 16, 32, 48}, 0.f, 1.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bn.forward(input, Mode::train));
    }
}
BENCHMARK(BM_batchnorm_forward)->Unit(benchmark::kMillisecond);

void BM_dropout_forward(benchmark::State& state) {
    SeededRng rng(1);
    Dropout<float> drop(0.5, 42);
    Tensor<float> input = rng_normal<float>(rng, {32, 16, 32, 48}, 0.f, 1.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(drop.forward(input, Mode::train));
    }
}
BENCHMARK(BM_dropout_forward)->Unit(benchmark::kMillisecond);

void BM_maxpool_forward(benchmark::State& state) {
    SeededRng rng(1);
    MaxPool2x2<float> pool;
    Tensor<float> input = rng_normal<float>(rng, {32, 16, 64, 96}, 0.f, 1.f);
    for (auto _ : state) {
        benchmark::DoNotOptimize(pool.forward(input));
    }
}
BENCHMARK(BM_maxpool_forward)->Unit(benchmark::kMillisecond);

}  // namespace
