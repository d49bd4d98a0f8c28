// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "petdiff/tensor.hpp"

namespace petdiff::metrics {

inline constexpr double kPsnrCap = 100.0;

/// Squared-error bookkeeping shared by PSNR and NMSE.
struct ErrorStats {
    double sse = 0.0;         // sum (a - ref)^2
    double ref_energy = 0.0;  // sum ref^2
    std::int64_t n = 0;
    double mse() const { return sse / static_cast<double>(n); }
};

ErrorStats error_stats(const Tensor& a, const Tensor& ref);

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01,
/// K2 0.03, data range 1). Images are (H, W) with H, W >= 11.
double ssim(const Tensor& a, const Tensor& b);

/// 10 log10(1 / MSE), capped at 100 dB (also the value for identical images).
double psnr(const Tensor& a, const Tensor& b);
double psnr_from(const ErrorStats& s);

/// ||a - ref||^2 / ||ref||^2; throws for an all-zero reference.
double nmse(const Tensor& a, const Tensor& ref);
double nmse_from(const ErrorStats& s);

/// Perceptual-distance proxy: three random 3x3 conv + tanh layers (8, 16, 32
/// channels, 2x average pooling between layers) seeded by featurizer_seed.
/// Per layer, features are unit-normalised over channels at every pixel and
/// the squared difference is averaged over pixels; layers are averaged.
double perceptual_distance(const Tensor& a, const Tensor& b, std::uint64_t featurizer_seed = 0);

struct TTest {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
    double mean_diff = 0.0;
};

/// Two-tailed paired t-test on d = xs - ys. Throws std::domain_error when
/// the differences have zero variance and std::invalid_argument for n < 2.
TTest paired_ttest(const std::vector<double>& xs, const std::vector<double>& ys);

struct SliceRecord {
    std::string method;
    std::string subject;
    std::string orientation = "axial";
    int slice = 0;
    double ssim = 0.0;
    double psnr = 0.0;
    double nmse = 0.0;
    double lpips_proxy = 0.0;
};

SliceRecord evaluate_slice(const Tensor& pred, const Tensor& ref, std::uint64_t featurizer_seed = 0);

struct Aggregate {
    std::string method;
    std::string metric;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1)
    std::int64_t n = 0;
};

struct TestRow {
    std::string method_a, method_b, metric;
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false;
};

inline const std::vector<std::string> kMetricNames{"ssim", "psnr", "nmse", "lpips_proxy"};

double metric_value(const SliceRecord& r, const std::string& metric);

struct EvalReport {
    std::vector<SliceRecord> per_slice;
    std::vector<Aggregate> aggregates;
    std::vector<TestRow> tests;

    std::vector<std::string> methods() const;  // in first-seen order
    /// Recomputes aggregates and all pairwise per-slice paired tests.
    void finalize();
    const Aggregate& aggregate(const std::string& method, const std::string& metric) const;

    void write_json(const std::filesystem::path& path) const;
    void write_slices_tsv(const std::filesystem::path& path) const;
    /// Table rows "method  ssim mean±std  psnr mean±std ...".
    std::string format_table() const;
};

}  // namespace petdiff::metrics
