// Parallel kernels against the serial reference at model-like shapes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "latenthop/kernels.hpp"

namespace k = latenthop::kernels;

namespace {

std::vector<float> random_vec(size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = nd(rng);
    return v;
}

template <bool Parallel>
void BM_linear(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0)), in = static_cast<int>(state.range(1)), out = in * 4;
    const auto x = random_vec(static_cast<size_t>(rows * in), 1);
    const auto w = random_vec(static_cast<size_t>(out * in), 2);
    const auto b = random_vec(static_cast<size_t>(out), 3);
    std::vector<float> y(static_cast<size_t>(rows * out));
    for (auto _ : state) {
        if constexpr (Parallel) k::parallel::linear(x, w, b, y, rows, in, out);
        else k::reference::linear(x, w, b, y, rows, in, out);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * int64_t(rows) * in * out);
}

template <bool Parallel>
void BM_attention(benchmark::State& state) {
    k::AttentionShape s;
    s.n_new = s.n_total = static_cast<int>(state.range(0));
    s.n_heads = 12;
    s.n_kv_heads = 12;
    s.head_dim = 64;
    const size_t width = static_cast<size_t>(s.n_heads * s.head_dim);
    const auto q = random_vec(static_cast<size_t>(s.n_new) * width, 4);
    const auto kk = random_vec(static_cast<size_t>(s.n_total) * width, 5);
    const auto v = random_vec(static_cast<size_t>(s.n_total) * width, 6);
    std::vector<float> out(q.size());
    for (auto _ : state) {
        if constexpr (Parallel) k::parallel::attention(q, kk, v, s, {}, {}, out);
        else k::reference::attention(q, kk, v, s, {}, {}, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <bool Parallel>
void BM_layer_norm(benchmark::State& state) {
    const int rows = static_cast<int>(state.range(0)), dim = 768;
    const auto x = random_vec(static_cast<size_t>(rows * dim), 7);
    const std::vector<float> g(dim, 1.0f), b(dim, 0.0f);
    std::vector<float> y(x.size());
    for (auto _ : state) {
        if constexpr (Parallel) k::parallel::layer_norm(x, g, b, 1e-5f, y, rows, dim);
        else k::reference::layer_norm(x, g, b, 1e-5f, y, rows, dim);
        benchmark::DoNotOptimize(y.data());
    }
}

}  // namespace

BENCHMARK(BM_linear<false>)->Name("linear/reference")->Args({1, 768})->Args({64, 768});
BENCHMARK(BM_linear<true>)->Name("linear/parallel")->Args({1, 768})->Args({64, 768})->UseRealTime();
BENCHMARK(BM_attention<false>)->Name("attention/reference")->Arg(16)->Arg(128);
BENCHMARK(BM_attention<true>)->Name("attention/parallel")->Arg(16)->Arg(128)->UseRealTime();
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/reference")->Arg(64);
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/parallel")->Arg(64)->UseRealTime();

BENCHMARK_MAIN();
