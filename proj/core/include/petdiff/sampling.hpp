// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>

#include "petdiff/diffusion.hpp"
#include "petdiff/network.hpp"

namespace petdiff::sampling {

struct SamplerConfig {
    int steps = 0;  // 0: the full schedule length
    std::uint64_t seed = 0;
    bool mri_active = true;
    bool clip_x0 = true;
    void validate(int T) const;
};

/// Elementwise mean of the two branch estimates (values only).
Tensor ensemble(const nn::PredictionPair& pair);

/// Subsequence of `steps` timesteps ending at T with betas recomputed so the
/// retained alpha-bar values are preserved. steps == T returns the input.
diffusion::NoiseSchedule respace_schedule(const diffusion::NoiseSchedule& schedule, int steps);

/// Indices (0-based, into the original schedule) retained by respace_schedule.
std::vector<int> respaced_indices(int T, int steps);

using StepCallback = std::function<void(int t, const Tensor& y)>;

/// Ancestral sampling from y_T ~ N(0, I). x_ld and z_mri are (N, 1, H, W);
/// z_mri is never read when cfg.mri_active is false. Returns the final
/// estimate, clipped to [0, 1] when cfg.clip_x0 is set.
Tensor sample(const nn::M2DiffModel& model, const Tensor& x_ld, const Tensor& z_mri, const SamplerConfig& cfg,
              const diffusion::NoiseSchedule& schedule, const StepCallback& on_step = {});

/// Same as sample() with caller-supplied initial state and per-step noise,
/// noise(t) returning the draw used at step t (ignored at t = 1).
Tensor sample_with_noise(const nn::M2DiffModel& model, const Tensor& x_ld, const Tensor& z_mri,
                         const SamplerConfig& cfg, const diffusion::NoiseSchedule& schedule, Tensor y_T,
                         const std::function<Tensor(int t)>& noise, const StepCallback& on_step = {});

}  // namespace petdiff::sampling
