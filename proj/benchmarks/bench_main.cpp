#include <benchmark/benchmark.h>

#include <random>

#include "srae/losses.hpp"
#include "srae/training.hpp"

using namespace srae;

namespace {

Tensor uniform(Shape s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Tensor t(std::move(s));
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// conv(x) -> sum of squares, args: batch, spatial size, channels in/out, stride.
struct ConvCase {
    OpGraph g;
    Bindings b;
    ConvCase(int n, int size, int ci, int co, int stride) {
        const NodeId x = g.input("x");
        const NodeId w = g.parameter("w");
        const NodeId bias = g.parameter("b");
        g.set_output("loss", g.sum_squares(g.conv2d(x, w, bias, stride, 1)));
        b["x"] = uniform({n, size, size, ci}, 1);
        b["w"] = uniform({3, 3, ci, co}, 2);
        b["b"] = uniform({co}, 3);
    }
};

void BM_ConvForward(benchmark::State& state) {
    ConvCase c(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), static_cast<int>(state.range(2)),
               static_cast<int>(state.range(3)), static_cast<int>(state.range(4)));
    for (auto _ : state) benchmark::DoNotOptimize(evaluate(c.g, c.b, {"loss"}));
}

void BM_ConvBackward(benchmark::State& state) {
    ConvCase c(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)), static_cast<int>(state.range(2)),
               static_cast<int>(state.range(3)), static_cast<int>(state.range(4)));
    for (auto _ : state) benchmark::DoNotOptimize(backward(c.g, c.b, "loss", {"w", "b"}));
}

// Trunk-like shapes at the default batch size.
#define CONV_ARGS \
    Args({32, 32, 1, 16, 2})->Args({32, 16, 16, 32, 2})->Args({32, 8, 32, 32, 2})->Args({32, 4, 32, 32, 1})

BENCHMARK(BM_ConvForward)->CONV_ARGS->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward)->CONV_ARGS->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
    TrainConfig config;
    config.variant = state.range(0) == 1 ? Variant::OneDisc : Variant::TwoDisc;
    SynthSpec spec;
    spec.counts = {64, 64};
    const Dataset ds = generate_synthetic(spec);
    const FeatureExtractor extractor = FeatureExtractor::standard(1, 0);
    ParamStore params = init_params(config.hyper, config.variant, 0);
    RngState rng{0, 0};
    for (auto _ : state) {
        auto [batch, next] = sample_batch(ds, config.batch_size, rng);
        benchmark::DoNotOptimize(train_step(params, config.hyper, extractor, batch, config, rng));
        rng = next;
    }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);

void BM_EncodeMean(benchmark::State& state) {
    const SraeHyper hyper;
    const ParamStore params = init_params(hyper, Variant::TwoDisc, 0);
    const Tensor x = uniform({256, 32, 32, 1}, 4);
    for (auto _ : state) benchmark::DoNotOptimize(encode(params, hyper, x));
}
BENCHMARK(BM_EncodeMean)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
