// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>
#include <vector>

#include "petdiff/tensor.hpp"

namespace petdiff::diffusion {

enum class ScheduleKind { cosine, linear };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Per-timestep tables of a Gaussian diffusion. Timesteps are 1-based:
/// t = 1 is the last reverse step, t = T the first. Accessors take t, the
/// underlying vectors are indexed t - 1.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::cosine;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> alpha_bars_prev;
    std::vector<double> posterior_variance;
    std::vector<double> posterior_log_variance_clipped;
    std::vector<double> posterior_mean_coef1;
    std::vector<double> posterior_mean_coef2;
    // Timestep fed to the network at each step. Identity unless respaced.
    std::vector<int> timestep_map;

    double beta(int t) const { return betas[index(t)]; }
    double alpha_bar(int t) const { return alpha_bars[index(t)]; }
    double min_log_variance(int t) const { return posterior_log_variance_clipped[index(t)]; }
    double max_log_variance(int t) const;
    int model_timestep(int t) const { return timestep_map[index(t)]; }
    void check_timestep(int t) const;

private:
    std::size_t index(int t) const;
};

/// Builds a schedule from per-step betas; the remaining tables are derived.
NoiseSchedule schedule_from_betas(std::vector<double> betas, ScheduleKind kind, std::vector<int> timestep_map = {});

/// Cosine (squared-cosine alpha-bar, offset 0.008) or linear (1e-4 .. 0.02
/// rescaled by 1000 / T) betas, each capped at 0.999.
NoiseSchedule build_schedule(int T, ScheduleKind kind);

/// y_t = sqrt(abar_t) y0 + sqrt(1 - abar_t) eps
Tensor q_sample(const Tensor& y0, int t, const Tensor& eps, const NoiseSchedule& schedule);

/// Mean of q(y_{t-1} | y_t, y0) with y0 replaced by the estimate.
Tensor posterior_mean(const Tensor& y0_hat, const Tensor& y_t, int t, const NoiseSchedule& schedule);

/// logistic(v) * log(beta_t) + (1 - logistic(v)) * log(beta_tilde_t), per element.
Tensor log_variance_from_logits(const Tensor& v, int t, const NoiseSchedule& schedule);

double logistic(double v);

struct ReverseStepInput {
    Tensor y_t;
    Tensor y0_hat;
    Tensor v;
    int t = 0;
    Tensor noise;
};

/// One ancestral step: posterior mean plus exp(logvar / 2) * noise.
Tensor reverse_step(const ReverseStepInput& input, const NoiseSchedule& schedule);

/// Same step with an explicit per-pixel log variance.
Tensor reverse_step_log_variance(const Tensor& y_t, const Tensor& y0_hat, const Tensor& log_variance, int t,
                                 const Tensor& noise, const NoiseSchedule& schedule);

struct VlbTerm {
    double value = 0.0;
    Tensor grad_v;  // d value / d v
};

/// Variational term used to train the variance logits. For t > 1 this is the
/// KL between q(y_{t-1} | y_t, y0) and N(mu(y0_hat, y_t), exp(logvar(v))),
/// averaged per pixel in nats. At t = 1 it is the negative log-likelihood of
/// y0 under a Gaussian discretised to 256 bins on [0, 1].
double vlb_variance_term(const Tensor& y0, const Tensor& y_t, const Tensor& y0_hat, const Tensor& v, int t,
                         const NoiseSchedule& schedule);

/// Value and gradient w.r.t. v; y0_hat is treated as a constant.
VlbTerm vlb_variance_term_with_grad(const Tensor& y0, const Tensor& y_t, const Tensor& y0_hat, const Tensor& v, int t,
                                    const NoiseSchedule& schedule);

}  // namespace petdiff::diffusion
