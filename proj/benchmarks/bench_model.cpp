// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <random>

#include "petdiff/diffusion.hpp"
#include "petdiff/network.hpp"
#include "petdiff/sampling.hpp"
#include "petdiff/training.hpp"

using namespace petdiff;

namespace {

// Desk configuration used by the learning acceptance runs. variant: 6 full
// model, 3 no HFF, 1 PET-only single task.
nn::ModelConfig desk(int variant) {
    nn::ModelConfig m;
    m.base_channels = 8;
    m.channel_multipliers = {1, 2, 2, 4};
    m.attention_levels = {3, 4};
    m.num_res_blocks = 1;
    m.dropout = 0.0;
    m.input_size = 64;
    if (variant == 1) {
        m.task2_enabled = false;
        m.hff_enabled = false;
    } else if (variant == 3) {
        m.hff_enabled = false;
    }
    return m;
}

Tensor uniform(const Shape& s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor t(s);
    for (auto& v : t.vec()) v = u(rng);
    return t;
}

void BM_ForwardNoGrad(benchmark::State& st) {
    const nn::M2DiffModel model(desk(static_cast<int>(st.range(0))), 0);
    std::mt19937_64 rng(1);
    const std::int64_t n = st.range(1);
    const ag::Var y(uniform({n, 1, 64, 64}, rng)), x(uniform({n, 1, 64, 64}, rng)), z(uniform({n, 1, 64, 64}, rng));
    const std::vector<int> t(static_cast<std::size_t>(n), 500);
    ag::NoGradGuard ng;
    for (auto _ : st) benchmark::DoNotOptimize(model.forward(y, x, z, t, st.range(0) != 1).y0_hat_pet.value().data());
    st.counters["params"] = static_cast<double>(model.parameter_count());
}
BENCHMARK(BM_ForwardNoGrad)->Args({6, 8})->Args({3, 8})->Args({1, 8})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& st) {
    train::TrainConfig tc;
    tc.T = 1000;
    tc.batch_size = 4;
    tc.learning_rate = 3e-4;
    train::TrainState state(desk(static_cast<int>(st.range(0))), tc);
    const auto schedule = diffusion::build_schedule(tc.T, tc.schedule);
    std::mt19937_64 rng(2);
    std::vector<data::SliceSample> batch(4);
    for (auto& s : batch) {
        s.x_ld = uniform({64, 64}, rng);
        s.z_mri = uniform({64, 64}, rng);
        s.y0_sd = uniform({64, 64}, rng);
    }
    for (auto _ : st) benchmark::DoNotOptimize(train::train_step(state, batch, schedule, train::LossWeights{}).total);
}
BENCHMARK(BM_TrainStep)->Arg(6)->Arg(3)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SampleRespaced(benchmark::State& st) {
    const nn::M2DiffModel model(desk(6), 0);
    const auto schedule = diffusion::build_schedule(1000, diffusion::ScheduleKind::cosine);
    std::mt19937_64 rng(3);
    const Tensor x = uniform({2, 1, 64, 64}, rng), z = uniform({2, 1, 64, 64}, rng);
    sampling::SamplerConfig cfg;
    cfg.steps = static_cast<int>(st.range(0));
    for (auto _ : st) benchmark::DoNotOptimize(sampling::sample(model, x, z, cfg, schedule).data());
}
BENCHMARK(BM_SampleRespaced)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_QSample(benchmark::State& st) {
    const auto schedule = diffusion::build_schedule(1000, diffusion::ScheduleKind::cosine);
    std::mt19937_64 rng(4);
    const Tensor y0 = uniform({8, 1, 64, 64}, rng), eps = uniform({8, 1, 64, 64}, rng);
    for (auto _ : st) benchmark::DoNotOptimize(diffusion::q_sample(y0, 400, eps, schedule).data());
}
BENCHMARK(BM_QSample)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
