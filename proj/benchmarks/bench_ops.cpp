// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "petdiff/autograd.hpp"
#include "petdiff/metrics.hpp"

using namespace petdiff;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t(s);
    for (auto& v : t.vec()) v = g(rng);
    return t;
}

// args: channels, spatial size
void BM_Conv3x3Forward(benchmark::State& st) {
    const auto c = st.range(0), hw = st.range(1);
    ag::NoGradGuard ng;
    const ag::Var x(random_tensor({4, c, hw, hw}, 1));
    const ag::Var w(random_tensor({c, c, 3, 3}, 2));
    const ag::Var b(Tensor({c}));
    for (auto _ : st) benchmark::DoNotOptimize(ag::conv2d(x, w, b, 1).value().data());
    st.SetItemsProcessed(st.iterations() * 4 * c * c * 9 * hw * hw);
}
BENCHMARK(BM_Conv3x3Forward)->Args({8, 64})->Args({16, 32})->Args({32, 8})->Unit(benchmark::kMillisecond);

void BM_Conv3x3ForwardBackward(benchmark::State& st) {
    const auto c = st.range(0), hw = st.range(1);
    const ag::Var x(random_tensor({4, c, hw, hw}, 1), true);
    const ag::Var w(random_tensor({c, c, 3, 3}, 2), true);
    const ag::Var b(Tensor({c}), true);
    const ag::Var target(random_tensor({4, c, hw, hw}, 3));
    for (auto _ : st) {
        ag::mse(ag::conv2d(x, w, b, 1), target).backward();
        benchmark::ClobberMemory();
    }
}
BENCHMARK(BM_Conv3x3ForwardBackward)->Args({8, 64})->Args({16, 32})->Unit(benchmark::kMillisecond);

// args: channels, spatial size
void BM_SpatialAttention(benchmark::State& st) {
    const auto c = st.range(0), hw = st.range(1);
    ag::NoGradGuard ng;
    const ag::Var qkv(random_tensor({4, 3 * c, hw, hw}, 4));
    for (auto _ : st) benchmark::DoNotOptimize(ag::spatial_attention(qkv, 1).value().data());
}
BENCHMARK(BM_SpatialAttention)->Args({16, 16})->Args({32, 8})->Unit(benchmark::kMicrosecond);

void BM_GroupNorm(benchmark::State& st) {
    ag::NoGradGuard ng;
    const ag::Var x(random_tensor({4, 16, 32, 32}, 5));
    const ag::Var g(Tensor({16}, 1.0)), b(Tensor({16}));
    for (auto _ : st) benchmark::DoNotOptimize(ag::group_norm(x, 8, g, b).value().data());
}
BENCHMARK(BM_GroupNorm)->Unit(benchmark::kMicrosecond);

void BM_Ssim(benchmark::State& st) {
    const auto n = st.range(0);
    Tensor a = random_tensor({n, n}, 6), b = random_tensor({n, n}, 7);
    for (auto _ : st) benchmark::DoNotOptimize(metrics::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
