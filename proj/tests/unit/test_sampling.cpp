// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "petdiff/errors.hpp"
#include "petdiff/sampling.hpp"
#include "test_util.hpp"

using namespace petdiff;
using namespace petdiff::sampling;
using ag::Var;
using diffusion::ScheduleKind;
using tu::randn;
using tu::randu;

namespace {

nn::PredictionPair pair_of(const Tensor& a, const Tensor& b) {
    nn::PredictionPair p;
    p.y0_hat_pet = Var(a);
    p.v_pet = Var(Tensor::zeros_like(a));
    p.y0_hat_mri = Var(b);
    p.v_mri = Var(Tensor::zeros_like(b));
    p.mri_active = true;
    return p;
}

struct Inputs {
    Tensor x, z;
};

Inputs inputs(std::int64_t n, std::int64_t size, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return {randu({n, 1, size, size}, rng), randu({n, 1, size, size}, rng)};
}

}  // namespace

TEST(Ensemble, Examples) {
    EXPECT_EQ(ensemble(pair_of(Tensor({2, 2}, 0.2), Tensor({2, 2}, 0.4)))[3], 0.30000000000000004);
    const Tensor a = tu::lcg_image(1, 5, 5);
    EXPECT_TRUE(bitwise_equal(ensemble(pair_of(a, a)), a));
    std::mt19937_64 rng(2);
    const Tensor x = randn({3, 4}, rng), y = randn({3, 4}, rng);
    EXPECT_TRUE(bitwise_equal(ensemble(pair_of(x, y)), ensemble(pair_of(y, x))));
    const Tensor e = ensemble(pair_of(x, y));
    for (std::int64_t i = 0; i < e.size(); ++i) {
        EXPECT_GE(e[i], std::min(x[i], y[i]));
        EXPECT_LE(e[i], std::max(x[i], y[i]));
    }
}

TEST(Ensemble, RejectsMissingBranch) {
    nn::PredictionPair p = pair_of(Tensor({2, 2}), Tensor({2, 2}));
    p.mri_active = false;
    EXPECT_THROW(ensemble(p), std::logic_error);
    p = pair_of(Tensor({2, 2}), Tensor({2, 2}));
    p.y0_hat_mri = Var();
    EXPECT_THROW(ensemble(p), std::logic_error);
    EXPECT_THROW(ensemble(pair_of(Tensor({2, 2}), Tensor({2, 3}))), std::invalid_argument);
}

TEST(Respace, IdentityAtFullLength) {
    for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear}) {
        const auto s = diffusion::build_schedule(50, kind);
        const auto r = respace_schedule(s, 50);
        EXPECT_EQ(r.betas, s.betas);
        EXPECT_EQ(r.alpha_bars, s.alpha_bars);
        EXPECT_EQ(r.timestep_map, s.timestep_map);
    }
}

TEST(Respace, SingleStepKeepsFinalAlphaBar) {
    const auto s = diffusion::build_schedule(1000, ScheduleKind::cosine);
    const auto r = respace_schedule(s, 1);
    ASSERT_EQ(r.T, 1);
    EXPECT_NEAR(r.alpha_bars[0], s.alpha_bars.back(), 1e-15);
    EXPECT_EQ(r.timestep_map[0], s.timestep_map.back());
}

TEST(Respace, TenToFive) {
    const auto s = diffusion::build_schedule(10, ScheduleKind::linear);
    EXPECT_EQ(respaced_indices(10, 5), (std::vector<int>{1, 3, 5, 7, 9}));
    const auto r = respace_schedule(s, 5);
    ASSERT_EQ(r.T, 5);
    const std::vector<int> k{1, 3, 5, 7, 9};
    double prev = 1.0;
    for (int i = 0; i < 5; ++i) {
        const double ab = s.alpha_bars[static_cast<std::size_t>(k[static_cast<std::size_t>(i)])];
        EXPECT_NEAR(r.alpha_bars[static_cast<std::size_t>(i)], ab, 1e-14);
        EXPECT_NEAR(r.betas[static_cast<std::size_t>(i)], 1.0 - ab / prev, 1e-14);
        EXPECT_EQ(r.model_timestep(i + 1), s.model_timestep(k[static_cast<std::size_t>(i)] + 1));
        prev = ab;
    }
}

TEST(Respace, InvariantsAcrossStepCounts) {
    const auto s = diffusion::build_schedule(1000, ScheduleKind::cosine);
    for (int steps : {1, 2, 7, 50, 250, 999}) {
        const auto k = respaced_indices(1000, steps);
        EXPECT_EQ(static_cast<int>(k.size()), steps);
        EXPECT_EQ(k.back(), 999);
        for (std::size_t i = 1; i < k.size(); ++i) EXPECT_GT(k[i], k[i - 1]);
        const auto r = respace_schedule(s, steps);
        for (double b : r.betas) {
            EXPECT_GT(b, 0.0);
            EXPECT_LT(b, 1.0);
        }
    }
    EXPECT_THROW(respaced_indices(10, 0), std::invalid_argument);
    EXPECT_THROW(respaced_indices(10, 11), std::invalid_argument);
}

TEST(Sample, DeterministicAndSeedSensitive) {
    const nn::M2DiffModel m(tu::tiny_config(), 3);
    const auto s = diffusion::build_schedule(20, ScheduleKind::cosine);
    const auto in = inputs(2, 8, 4);
    SamplerConfig cfg;
    cfg.seed = 11;
    cfg.steps = 5;
    const Tensor a = sample(m, in.x, in.z, cfg, s), b = sample(m, in.x, in.z, cfg, s);
    EXPECT_TRUE(bitwise_equal(a, b));
    cfg.seed = 12;
    EXPECT_GT(tu::max_abs_diff(a, sample(m, in.x, in.z, cfg, s)), 1e-6);
}

TEST(Sample, RangeAfterClipping) {
    const nn::M2DiffModel m(tu::tiny_config(), 5);
    const auto s = diffusion::build_schedule(1000, ScheduleKind::cosine);
    const auto in = inputs(3, 8, 6);
    for (bool active : {true, false}) {
        SamplerConfig cfg;
        cfg.steps = 4;
        cfg.mri_active = active;
        const Tensor y = sample(m, in.x, in.z, cfg, s);
        EXPECT_TRUE(y.all_finite());
        EXPECT_GE(y.min(), 0.0);
        EXPECT_LE(y.max(), 1.0);
        EXPECT_EQ(y.shape(), in.x.shape());
    }
}

TEST(Sample, InactiveMriIsNeverRead) {
    const nn::M2DiffModel m(tu::tiny_config(), 7);
    const auto s = diffusion::build_schedule(20, ScheduleKind::cosine);
    auto in = inputs(1, 8, 8);
    SamplerConfig cfg;
    cfg.mri_active = false;
    cfg.seed = 3;
    const Tensor ref = sample(m, in.x, in.z, cfg, s);
    Tensor nan_z(in.z.shape(), std::nan(""));
    EXPECT_TRUE(bitwise_equal(ref, sample(m, in.x, nan_z, cfg, s)));
    EXPECT_TRUE(bitwise_equal(ref, sample(m, in.x, Tensor(), cfg, s)));
    cfg.mri_active = true;
    EXPECT_THROW(sample(m, in.x, Tensor(), cfg, s), std::invalid_argument);
    EXPECT_THROW(sample(m, in.x, nan_z, cfg, s), std::exception);
}

TEST(Sample, MriChangesActiveOutput) {
    const nn::M2DiffModel m(tu::tiny_config(), 9);
    const auto s = diffusion::build_schedule(20, ScheduleKind::cosine);
    const auto in = inputs(1, 8, 10);
    SamplerConfig cfg;
    cfg.steps = 3;
    cfg.clip_x0 = false;
    const Tensor on = sample(m, in.x, in.z, cfg, s);
    cfg.mri_active = false;
    EXPECT_GT(tu::max_abs_diff(on, sample(m, in.x, in.z, cfg, s)), 1e-9);
}

TEST(Sample, RespacedIdentityMatchesFullTrajectory) {
    const nn::M2DiffModel m(tu::tiny_config(), 13);
    const auto s = diffusion::build_schedule(12, ScheduleKind::linear);
    const auto in = inputs(1, 8, 14);
    SamplerConfig full, same;
    full.seed = same.seed = 21;
    same.steps = 12;
    std::vector<int> seen;
    const Tensor a = sample(m, in.x, in.z, full, s, [&](int t, const Tensor&) { seen.push_back(t); });
    EXPECT_TRUE(bitwise_equal(a, sample(m, in.x, in.z, same, s)));
    ASSERT_EQ(seen.size(), 12u);
    EXPECT_EQ(seen.front(), 12);
    EXPECT_EQ(seen.back(), 1);
}

TEST(Sample, CallerNoiseDrivesTrajectory) {
    const nn::M2DiffModel m(tu::tiny_config(), 15);
    const auto s = diffusion::build_schedule(6, ScheduleKind::cosine);
    const auto in = inputs(1, 8, 16);
    SamplerConfig cfg;
    const Tensor y_T(in.x.shape(), 0.1);
    auto zero = [&](int) { return Tensor(in.x.shape()); };
    const Tensor a = sample_with_noise(m, in.x, in.z, cfg, s, y_T, zero);
    const Tensor b = sample_with_noise(m, in.x, in.z, cfg, s, y_T, zero);
    EXPECT_TRUE(bitwise_equal(a, b));
    auto ones = [&](int) { return Tensor(in.x.shape(), 1.0); };
    EXPECT_GT(tu::max_abs_diff(a, sample_with_noise(m, in.x, in.z, cfg, s, y_T, ones)), 1e-9);
}

TEST(SamplerConfig, Validation) {
    SamplerConfig cfg;
    cfg.steps = 11;
    EXPECT_THROW(cfg.validate(10), std::exception);
    cfg.steps = -1;
    EXPECT_THROW(cfg.validate(10), std::exception);
    cfg.steps = 10;
    EXPECT_NO_THROW(cfg.validate(10));
}
