// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "petdiff/errors.hpp"

namespace petdiff::sampling {

void SamplerConfig::validate(int T) const {
    if (steps < 0 || steps > T)
        throw std::invalid_argument("sampler.steps must lie in [1, " + std::to_string(T) + "] (0 = all)");
}

Tensor ensemble(const nn::PredictionPair& pair) {
    if (!pair.mri_active || !pair.has_mri_branch())
        throw std::logic_error("ensemble: requires an active MRI branch; route to the PET estimate instead");
    const Tensor& a = pair.y0_hat_pet.value();
    const Tensor& b = pair.y0_hat_mri.value();
    require_same_shape(a, b, "ensemble");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (a[i] + b[i]);
    return out;
}

std::vector<int> respaced_indices(int T, int steps) {
    if (steps < 1 || steps > T)
        throw std::invalid_argument("respace: steps must lie in [1, " + std::to_string(T) + "], got " +
                                    std::to_string(steps));
    std::vector<int> k;
    for (int i = 0; i < steps; ++i)
        k.push_back(static_cast<int>(std::llround(static_cast<double>(i + 1) * T / steps)) - 1);
    return k;
}

diffusion::NoiseSchedule respace_schedule(const diffusion::NoiseSchedule& schedule, int steps) {
    const auto k = respaced_indices(schedule.T, steps);
    if (steps == schedule.T) return schedule;
    std::vector<double> betas;
    std::vector<int> map;
    double prev = 1.0;
    for (int idx : k) {
        const double ab = schedule.alpha_bars[static_cast<std::size_t>(idx)];
        betas.push_back(1.0 - ab / prev);
        prev = ab;
        map.push_back(schedule.timestep_map[static_cast<std::size_t>(idx)]);
    }
    return diffusion::schedule_from_betas(std::move(betas), schedule.kind, std::move(map));
}

Tensor sample_with_noise(const nn::M2DiffModel& model, const Tensor& x_ld, const Tensor& z_mri,
                         const SamplerConfig& cfg, const diffusion::NoiseSchedule& schedule, Tensor y,
                         const std::function<Tensor(int t)>& noise, const StepCallback& on_step) {
    if (x_ld.rank() != 4 || x_ld.dim(1) != 1) throw std::invalid_argument("sample: x_ld must be (N, 1, H, W)");
    require_same_shape(x_ld, y, "sample");
    if (cfg.mri_active) {
        if (z_mri.empty()) throw std::invalid_argument("sample: mri_active is set but no MRI slice was given");
        if (!same_shape(x_ld, z_mri))
            throw DataError("sample: MRI shape " + shape_str(z_mri.shape()) + " differs from PET " + shape_str(x_ld.shape()));
    }
    ag::NoGradGuard no_grad;
    const ag::Var x(x_ld);
    const ag::Var z = cfg.mri_active ? ag::Var(z_mri) : ag::Var();
    const std::int64_t N = x_ld.dim(0);
    for (int t = schedule.T; t >= 1; --t) {
        const std::vector<int> tt(static_cast<std::size_t>(N), schedule.model_timestep(t));
        const nn::PredictionPair p = model.forward(ag::Var(y), x, z, tt, cfg.mri_active);
        const bool both = cfg.mri_active && p.has_mri_branch();
        Tensor y0 = both ? ensemble(p) : p.y0_hat_pet.value();
        Tensor logvar = diffusion::log_variance_from_logits(p.v_pet.value(), t, schedule);
        if (both) {
            const Tensor lm = diffusion::log_variance_from_logits(p.v_mri.value(), t, schedule);
            for (std::int64_t i = 0; i < logvar.size(); ++i) logvar[i] = 0.5 * (logvar[i] + lm[i]);
        }
        if (!y0.all_finite() || !logvar.all_finite())
            throw NumericalError("non-finite network output at sampling step t=" + std::to_string(t), t);
        if (cfg.clip_x0)
            for (auto& v : y0.vec()) v = std::clamp(v, -1.0, 1.0);
        const Tensor eps = t > 1 ? noise(t) : Tensor(y.shape());
        y = diffusion::reverse_step_log_variance(y, y0, logvar, t, eps, schedule);
        if (!y.all_finite()) throw NumericalError("non-finite sample at step t=" + std::to_string(t), t);
        if (on_step) on_step(t, y);
    }
    if (cfg.clip_x0)
        for (auto& v : y.vec()) v = std::clamp(v, 0.0, 1.0);
    return y;
}

Tensor sample(const nn::M2DiffModel& model, const Tensor& x_ld, const Tensor& z_mri, const SamplerConfig& cfg,
              const diffusion::NoiseSchedule& schedule, const StepCallback& on_step) {
    cfg.validate(schedule.T);
    const diffusion::NoiseSchedule s =
        cfg.steps == 0 || cfg.steps == schedule.T ? schedule : respace_schedule(schedule, cfg.steps);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor y(x_ld.shape());
    for (auto& v : y.vec()) v = normal(rng);
    auto draw = [&](int) {
        Tensor e(x_ld.shape());
        for (auto& v : e.vec()) v = normal(rng);
        return e;
    };
    return sample_with_noise(model, x_ld, z_mri, cfg, s, std::move(y), draw, on_step);
}

}  // namespace petdiff::sampling
