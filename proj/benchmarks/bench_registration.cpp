#include <benchmark/benchmark.h>

#include "xmid/phantom.hpp"
#include "xmid/prep.hpp"

namespace {

using namespace xmid;

void BM_register_translation(benchmark::State& state) {
    PhantomConfig config;
    config.seed = 9;
    const ImageSlice a = render_slice(config, 0, 0, 0, 5);
    const Tensor<float> moved = apply_translation(a.pixels, 3, -2, 500.0f);
    const int max_shift = static_cast<int>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(register_translation(a.pixels, moved, max_shift));
    }
}
BENCHMARK(BM_register_translation)->Arg(6)->Arg(12)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_expand_image(benchmark::State& state) {
    PhantomConfig config;
    config.seed = 9;
    const ImageSlice a = render_slice(config, 0, 0, 1, 7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(expand_image(a, config.base_h, config.base_w));
    }
}
BENCHMARK(BM_expand_image);

}  // namespace
