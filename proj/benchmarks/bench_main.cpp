#include <benchmark/benchmark.h>

#include <random>

#include "glandsynth/evalmetrics.hpp"
#include "glandsynth/nn/layers.hpp"
#include "glandsynth/preprocess.hpp"
#include "glandsynth/unetseg.hpp"

namespace {

using namespace gsyn;

Mask disc(int size, double cy, double cx, double r) {
    Mask m(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) m.at(y, x) = (y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r ? 1 : 0;
    return m;
}

void BM_Conv3x3Forward(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    std::mt19937_64 rng(1);
    nn::Conv2d conv(ch, ch, 3, 1, 1, true, rng);
    nn::Tensor x(4, ch, size, size, 0.5f);
    for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, nn::Mode::train));
    state.SetItemsProcessed(state.iterations() * 4);
}
BENCHMARK(BM_Conv3x3Forward)->Args({8, 64})->Args({32, 64})->Args({64, 32});

void BM_Conv3x3Backward(benchmark::State& state) {
    const int ch = static_cast<int>(state.range(0));
    const int size = static_cast<int>(state.range(1));
    std::mt19937_64 rng(1);
    nn::Conv2d conv(ch, ch, 3, 1, 1, true, rng);
    nn::Tensor x(4, ch, size, size, 0.5f);
    const nn::Tensor y = conv.forward(x, nn::Mode::train);
    nn::Tensor g(y.n(), y.c(), y.h(), y.w(), 1.0f);
    for (auto _ : state) benchmark::DoNotOptimize(conv.backward(g));
}
BENCHMARK(BM_Conv3x3Backward)->Args({8, 64})->Args({32, 64});

void BM_UNetForward(benchmark::State& state) {
    UNetConfig c;
    c.input_rows = c.input_cols = static_cast<int>(state.range(0));
    c.depth = 4;
    c.base_channels = 8;
    UNet model(c, 3);
    nn::Tensor x(1, 1, c.input_rows, c.input_cols, 0.3f);
    for (auto _ : state) benchmark::DoNotOptimize(model.forward(x, nn::Mode::eval));
}
BENCHMARK(BM_UNetForward)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_SurfaceDistance(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    const Mask a = disc(size, size * 0.45, size * 0.5, size * 0.25);
    const Mask b = disc(size, size * 0.5, size * 0.55, size * 0.22);
    for (auto _ : state) benchmark::DoNotOptimize(surface_distance_stats(a, b, Spacing2{0.6, 0.6}));
}
BENCHMARK(BM_SurfaceDistance)->Arg(64)->Arg(256);

void BM_Dice(benchmark::State& state) {
    const Mask a = disc(256, 110, 128, 60);
    const Mask b = disc(256, 128, 140, 55);
    for (auto _ : state) benchmark::DoNotOptimize(dice(a, b));
}
BENCHMARK(BM_Dice);

void BM_Clahe(benchmark::State& state) {
    const int size = static_cast<int>(state.range(0));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    Image im(size, size);
    for (auto& v : im.px) v = u(rng);
    PreprocessConfig c;
    for (auto _ : state) benchmark::DoNotOptimize(clahe(im, c));
}
BENCHMARK(BM_Clahe)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
