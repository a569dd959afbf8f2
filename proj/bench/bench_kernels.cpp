// Parallel vs. serial reference gemm, plus one denoiser forward pass.
#include <benchmark/benchmark.h>

#include <vector>

#include "poselift/autograd.hpp"
#include "poselift/blas.hpp"
#include "poselift/denoiser.hpp"
#include "poselift/rng.hpp"

namespace {

using poselift::blas::GemmShape;

// Shapes of the kernel propagation step: [J x J] * [J x d] over a batch.
GemmShape shape_for(const benchmark::State& state) {
    GemmShape s;
    s.batch = static_cast<std::size_t>(state.range(0));
    s.m = 17;
    s.k = 17;
    s.n = static_cast<std::size_t>(state.range(1));
    s.stride_a = 0;
    s.stride_b = s.k * s.n;
    s.stride_c = s.m * s.n;
    return s;
}

std::vector<double> random_buffer(std::size_t n, std::uint64_t seed) {
    poselift::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
    const GemmShape s = shape_for(state);
    const auto a = random_buffer(s.m * s.k, 1);
    const auto b = random_buffer(s.batch * s.k * s.n, 2);
    std::vector<double> c(s.batch * s.m * s.n);
    for (auto _ : state) {
        if constexpr (kParallel)
            poselift::blas::gemm(s, a.data(), b.data(), c.data());
        else
            poselift::blas::gemm_reference(s, a.data(), b.data(), c.data());
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(s.batch * s.m * s.n * s.k),
                                                 benchmark::Counter::kIsIterationInvariantRate);
}

void gemm_args(benchmark::internal::Benchmark* b) {
    for (int batch : {16, 256, 1024})
        for (int d : {64, 128}) b->Args({batch, d});
}

BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Apply(gemm_args);
BENCHMARK(BM_Gemm<false>)->Name("gemm/reference")->Apply(gemm_args);

void BM_DenoiserForward(benchmark::State& state) {
    poselift::DenoiserConfig cfg;
    cfg.d_model = static_cast<std::size_t>(state.range(1));
    poselift::Denoiser model(cfg, poselift::default_skeleton(), 7);
    const std::size_t batch = static_cast<std::size_t>(state.range(0));
    poselift::Rng rng(3);
    const auto y = rng.normal_tensor({batch, 17, 3});
    const auto x = rng.normal_tensor({batch, 17, 2});
    const std::vector<int> t(batch, 500);
    poselift::ag::NoGradGuard no_grad;
    for (auto _ : state) {
        auto out = model.forward(y, x, t, poselift::Mode::kEval);
        benchmark::DoNotOptimize(out.value().data().data());
    }
    state.counters["poses/s"] =
        benchmark::Counter(static_cast<double>(batch), benchmark::Counter::kIsIterationInvariantRate);
}

BENCHMARK(BM_DenoiserForward)->Args({16, 128})->Args({256, 128})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
