#include <benchmark/benchmark.h>

#include "xmid/model.hpp"

namespace {

using namespace xmid;

void BM_train_step(benchmark::State& state) {
    const ModelKind kind = static_cast<ModelKind>(state.range(0));
    SeededRng rng(1);
    Model<float> model(make_model_spec(kind, 2, 64, 96), rng);
    Batch<float> batch;
    batch.image = rng_normal<float>(rng, {32, 1, 64, 96}, 0.5f, 0.2f);
    if (kind_uses_difference(kind)) {
        batch.difference = rng_normal<float>(rng, {32, 1, 64, 96}, 0.f, 0.2f);
    }
    if (kind_uses_timestamp(kind)) {
        batch.timestamp = rng_normal<float>(rng, {32, 1}, 4.f, 2.f);
    }
    Tensor<float> labels = Tensor<float>::zeros({32, 2});
    for (int b = 0; b < 32; ++b) labels.at(b, b % 2) = 1.0f;
    OptimizerConfig opt;
    for (auto _ : state) {
        benchmark::DoNotOptimize(model.backward_and_step(batch, labels, opt));
    }
    state.SetLabel(kind_name(kind));
}
BENCHMARK(BM_train_step)
    ->Arg(static_cast<int>(ModelKind::cnn))
    ->Arg(static_cast<int>(ModelKind::xcnn_ts_absdiff))
    ->Unit(benchmark::kMillisecond);

}  // namespace
