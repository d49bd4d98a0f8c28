// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace petdiff::diffusion {

namespace {

constexpr double kMaxBeta = 0.999;
constexpr double kCosineOffset = 0.008;
// Half-width of one of 256 intensity bins on [0, 1].
constexpr double kBinHalfWidth = 0.5 / 255.0;
constexpr double kMinProb = 1e-12;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

void require_no_nan(const Tensor& t, const char* what) {
    if (t.any_nan()) throw std::invalid_argument(std::string(what) + ": NaN in input");
}

}  // namespace

ScheduleKind parse_schedule_kind(std::string_view name) {
    if (name == "cosine") return ScheduleKind::cosine;
    if (name == "linear") return ScheduleKind::linear;
    throw std::invalid_argument("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) { return kind == ScheduleKind::cosine ? "cosine" : "linear"; }

std::size_t NoiseSchedule::index(int t) const {
    check_timestep(t);
    return static_cast<std::size_t>(t - 1);
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > T)
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

double NoiseSchedule::max_log_variance(int t) const { return std::log(beta(t)); }

NoiseSchedule schedule_from_betas(std::vector<double> betas, ScheduleKind kind, std::vector<int> timestep_map) {
    if (betas.empty()) throw std::invalid_argument("schedule needs at least one step");
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.kind = kind;
    const auto n = betas.size();
    for (double b : betas)
        if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("beta outside (0, 1): " + std::to_string(b));
    s.betas = std::move(betas);
    s.alphas.resize(n);
    s.alpha_bars.resize(n);
    s.alpha_bars_prev.resize(n);
    double acc = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        s.alphas[i] = 1.0 - s.betas[i];
        s.alpha_bars_prev[i] = acc;
        acc *= s.alphas[i];
        s.alpha_bars[i] = acc;
    }
    s.posterior_variance.resize(n);
    s.posterior_mean_coef1.resize(n);
    s.posterior_mean_coef2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double ab = s.alpha_bars[i], abp = s.alpha_bars_prev[i];
        s.posterior_variance[i] = s.betas[i] * (1.0 - abp) / (1.0 - ab);
        s.posterior_mean_coef1[i] = s.betas[i] * std::sqrt(abp) / (1.0 - ab);
        s.posterior_mean_coef2[i] = (1.0 - abp) * std::sqrt(s.alphas[i]) / (1.0 - ab);
    }
    // beta_tilde_1 is zero; its log borrows the t = 2 value (or log beta_1 when T = 1).
    s.posterior_log_variance_clipped.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pv = s.posterior_variance[i];
        if (i == 0) pv = n > 1 ? s.posterior_variance[1] : s.betas[0];
        s.posterior_log_variance_clipped[i] = std::log(pv);
    }
    if (timestep_map.empty()) {
        timestep_map.resize(n);
        for (std::size_t i = 0; i < n; ++i) timestep_map[i] = static_cast<int>(i) + 1;
    }
    if (timestep_map.size() != n) throw std::invalid_argument("timestep map length mismatch");
    s.timestep_map = std::move(timestep_map);
    return s;
}

NoiseSchedule build_schedule(int T, ScheduleKind kind) {
    if (T < 1) throw std::invalid_argument("diffusion step count must be >= 1, got " + std::to_string(T));
    std::vector<double> betas(static_cast<std::size_t>(T));
    if (kind == ScheduleKind::cosine) {
        auto f = [T](double i) {
            const double c = std::cos((i / T + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
            return c * c;
        };
        for (int i = 0; i < T; ++i) betas[static_cast<std::size_t>(i)] = std::min(1.0 - f(i + 1) / f(i), kMaxBeta);
    } else if (kind == ScheduleKind::linear) {
        const double sc = 1000.0 / T;
        const double lo = sc * 1e-4, hi = sc * 0.02;
        for (int i = 0; i < T; ++i) {
            const double b = T == 1 ? lo : lo + (hi - lo) * i / (T - 1);
            betas[static_cast<std::size_t>(i)] = std::min(b, kMaxBeta);
        }
    } else {
        throw std::invalid_argument("unknown schedule kind");
    }
    return schedule_from_betas(std::move(betas), kind);
}

Tensor q_sample(const Tensor& y0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(y0, eps, "q_sample");
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor out(y0.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a * y0[i] + b * eps[i];
    return out;
}

Tensor posterior_mean(const Tensor& y0_hat, const Tensor& y_t, int t, const NoiseSchedule& schedule) {
    require_same_shape(y0_hat, y_t, "posterior_mean");
    schedule.check_timestep(t);
    const double c1 = schedule.posterior_mean_coef1[static_cast<std::size_t>(t - 1)];
    const double c2 = schedule.posterior_mean_coef2[static_cast<std::size_t>(t - 1)];
    Tensor out(y_t.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = c1 * y0_hat[i] + c2 * y_t[i];
    return out;
}

double logistic(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

Tensor log_variance_from_logits(const Tensor& v, int t, const NoiseSchedule& schedule) {
    const double lo = schedule.min_log_variance(t), hi = schedule.max_log_variance(t);
    Tensor out(v.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double f = logistic(v[i]);
        out[i] = f * hi + (1.0 - f) * lo;
    }
    return out;
}

Tensor reverse_step_log_variance(const Tensor& y_t, const Tensor& y0_hat, const Tensor& log_variance, int t,
                                 const Tensor& noise, const NoiseSchedule& schedule) {
    require_same_shape(y_t, y0_hat, "reverse_step");
    require_same_shape(y_t, log_variance, "reverse_step");
    require_same_shape(y_t, noise, "reverse_step");
    schedule.check_timestep(t);
    require_no_nan(y_t, "reverse_step y_t");
    require_no_nan(y0_hat, "reverse_step y0_hat");
    require_no_nan(log_variance, "reverse_step log variance");
    require_no_nan(noise, "reverse_step noise");
    if (t == 1)
        for (double n : noise.vec())
            if (n != 0.0) throw std::invalid_argument("reverse_step: noise must be zero at t = 1");
    Tensor out = posterior_mean(y0_hat, y_t, t, schedule);
    if (t == 1) return out;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += std::exp(0.5 * log_variance[i]) * noise[i];
    return out;
}

Tensor reverse_step(const ReverseStepInput& input, const NoiseSchedule& schedule) {
    require_same_shape(input.y_t, input.v, "reverse_step");
    require_no_nan(input.v, "reverse_step v");
    return reverse_step_log_variance(input.y_t, input.y0_hat, log_variance_from_logits(input.v, input.t, schedule),
                                     input.t, input.noise, schedule);
}

VlbTerm vlb_variance_term_with_grad(const Tensor& y0, const Tensor& y_t, const Tensor& y0_hat, const Tensor& v, int t,
                                    const NoiseSchedule& schedule) {
    require_same_shape(y0, y_t, "vlb_variance_term");
    require_same_shape(y0, y0_hat, "vlb_variance_term");
    require_same_shape(y0, v, "vlb_variance_term");
    schedule.check_timestep(t);
    for (const Tensor* x : {&y0, &y_t, &y0_hat, &v}) require_no_nan(*x, "vlb_variance_term");

    const double lo = schedule.min_log_variance(t), hi = schedule.max_log_variance(t);
    const Tensor mu_p = posterior_mean(y0_hat, y_t, t, schedule);
    const auto n = static_cast<double>(y0.size());
    VlbTerm out;
    out.grad_v = Tensor(v.shape());
    double total = 0.0;

    if (t > 1) {
        const Tensor mu_q = posterior_mean(y0, y_t, t, schedule);
        const double lq = lo;
        for (std::int64_t i = 0; i < y0.size(); ++i) {
            const double f = logistic(v[i]);
            const double lp = f * hi + (1.0 - f) * lo;
            const double dm = mu_q[i] - mu_p[i];
            const double r = std::exp(lq - lp);
            const double m2 = dm * dm * std::exp(-lp);
            const double kl = 0.5 * (-1.0 + lp - lq + r + m2);
            total += kl;
            const double dkl_dlp = 0.5 * (1.0 - r - m2);
            out.grad_v[i] = dkl_dlp * f * (1.0 - f) * (hi - lo) / n;
        }
    } else {
        for (std::int64_t i = 0; i < y0.size(); ++i) {
            const double f = logistic(v[i]);
            const double lp = f * hi + (1.0 - f) * lo;
            const double sigma = std::exp(0.5 * lp);
            const double a = y0[i] - mu_p[i] + kBinHalfWidth;
            const double b = y0[i] - mu_p[i] - kBinHalfWidth;
            const bool top = y0[i] > 1.0 - 1e-3;
            const bool bottom = y0[i] < 1e-3;
            // Work in whichever tail keeps the difference well conditioned.
            double p;
            if (top && bottom)
                p = 1.0;
            else if (top)
                p = normal_cdf(-b / sigma);
            else if (bottom)
                p = normal_cdf(a / sigma);
            else if (b > 0.0)
                p = normal_cdf(-b / sigma) - normal_cdf(-a / sigma);
            else
                p = normal_cdf(a / sigma) - normal_cdf(b / sigma);
            if (p < kMinProb) {
                total += -std::log(kMinProb);
                out.grad_v[i] = 0.0;
                continue;
            }
            total += -std::log(p);
            // dP/dlogvar = (-phi(a/s) a/s + phi(b/s) b/s) / 2, edge terms vanish.
            double dp = 0.0;
            if (!top) dp -= normal_pdf(a / sigma) * (a / sigma);
            if (!bottom) dp += normal_pdf(b / sigma) * (b / sigma);
            dp *= 0.5;
            out.grad_v[i] = (-dp / p) * f * (1.0 - f) * (hi - lo) / n;
        }
    }
    out.value = total / n;
    return out;
}

double vlb_variance_term(const Tensor& y0, const Tensor& y_t, const Tensor& y0_hat, const Tensor& v, int t,
                         const NoiseSchedule& schedule) {
    return vlb_variance_term_with_grad(y0, y_t, y0_hat, v, t, schedule).value;
}

}  // namespace petdiff::diffusion
