// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <nlohmann/json.hpp>

#include "oracle_values.hpp"
#include "petdiff/metrics.hpp"
#include "test_util.hpp"

using namespace petdiff;
using namespace petdiff::metrics;
using tu::lcg_image;
using tu::randu;

namespace {

Tensor noisy_copy(const Tensor& a, std::uint64_t seed) {
    const Tensor n = lcg_image(seed, a.dim(0), a.dim(1));
    Tensor b(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) b[i] = std::clamp(a[i] + 0.2 * (n[i] - 0.5), 0.0, 1.0);
    return b;
}

// Straight sliding-window SSIM: explicit 11x11 Gaussian window at every
// valid position, population moments.
double ssim_direct(const Tensor& a, const Tensor& b) {
    double w[11][11], total = 0.0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            total += w[i][j];
        }
    const double c1 = 1e-4, c2 = 9e-4;
    const std::int64_t H = a.dim(0), W = a.dim(1);
    double acc = 0.0;
    int count = 0;
    for (std::int64_t y = 0; y + 11 <= H; ++y)
        for (std::int64_t x = 0; x + 11 <= W; ++x) {
            double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
            for (int i = 0; i < 11; ++i)
                for (int j = 0; j < 11; ++j) {
                    const double k = w[i][j] / total, u = a.at(y + i, x + j), v = b.at(y + i, x + j);
                    ma += k * u;
                    mb += k * v;
                    saa += k * u * u;
                    sbb += k * v * v;
                    sab += k * u * v;
                }
            const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
            acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return acc / count;
}

// Two-sided tail of Student's t by composite Simpson integration of the density.
double t_two_sided(double t, int df) {
    const double nu = df;
    const double logc = std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) - 0.5 * std::log(nu * M_PI);
    auto f = [&](double x) { return std::exp(logc - (nu + 1) / 2 * std::log1p(x * x / nu)); };
    const int n = 200000;
    const double h = std::abs(t) / n;
    double s = f(0) + f(std::abs(t));
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(i * h);
    return 1.0 - 2.0 * s * h / 3.0;
}

Tensor permuted(const Tensor& a, const std::vector<std::int64_t>& perm) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < perm.size(); ++i) out[static_cast<std::int64_t>(i)] = a[perm[i]];
    return out;
}

}  // namespace

TEST(Oracle, ImagePairs) {
    for (const auto& o : oracle::kPairs) {
        const Tensor a = lcg_image(o.seed, 24, 24), b = noisy_copy(a, o.seed + 100);
        EXPECT_NEAR(ssim(a, b), o.ssim, 1e-10) << o.seed;
        EXPECT_NEAR(psnr(a, b), o.psnr, 1e-10) << o.seed;
        EXPECT_NEAR(nmse(a, b), o.nmse, 1e-12) << o.seed;
    }
}

TEST(Oracle, PairedTTest) {
    const std::vector<double> xs(std::begin(oracle::kTtestXs), std::end(oracle::kTtestXs));
    const std::vector<double> ys(std::begin(oracle::kTtestYs), std::end(oracle::kTtestYs));
    const auto r = paired_ttest(xs, ys);
    EXPECT_NEAR(r.t, oracle::kTtestT, 1e-8);
    EXPECT_NEAR(r.p, oracle::kTtestP, 1e-8);
    EXPECT_EQ(r.df, 9);
}

TEST(TTest, TailMatchesIndependentIntegration) {
    for (const auto& o : oracle::kTwoSided) {
        EXPECT_NEAR(t_two_sided(1.7, o.df), o.p, 1e-8) << o.df;
        std::vector<double> xs, ys;
        // Build differences with mean/sd chosen so the statistic is exactly 1.7.
        const int n = o.df + 1;
        for (int i = 0; i < n; ++i) {
            xs.push_back(i % 2 ? 1.0 : -1.0);
            ys.push_back(0.0);
        }
        if (n % 2) xs.back() = 0.0;
        double mean = 0.0, var = 0.0;
        for (double v : xs) mean += v / n;
        for (double v : xs) var += (v - mean) * (v - mean) / (n - 1);
        const double shift = 1.7 * std::sqrt(var / n) - mean;
        for (double& v : xs) v += shift;
        const auto r = paired_ttest(xs, ys);
        EXPECT_NEAR(r.t, 1.7, 1e-10);
        EXPECT_NEAR(r.p, o.p, 1e-8) << o.df;
    }
    std::mt19937_64 rng(9);
    for (int k = 0; k < 20; ++k) {
        std::vector<double> xs, ys;
        std::normal_distribution<double> g(0.0, 1.0);
        const int n = 3 + k;
        for (int i = 0; i < n; ++i) {
            xs.push_back(g(rng) + 0.3);
            ys.push_back(g(rng));
        }
        const auto r = paired_ttest(xs, ys);
        EXPECT_NEAR(r.p, t_two_sided(r.t, n - 1), 1e-8);
    }
}

TEST(TTest, Examples) {
    EXPECT_THROW(paired_ttest({1, 2, 3}, {1, 2, 3}), std::domain_error);
    const auto r = paired_ttest({1, -1}, {0, 0});
    EXPECT_EQ(r.t, 0.0);
    EXPECT_NEAR(r.p, 1.0, 1e-15);
    EXPECT_THROW(paired_ttest({1}, {0}), std::invalid_argument);
    EXPECT_THROW(paired_ttest({1, 2}, {0}), std::invalid_argument);
}

TEST(Ssim, MatchesDirectSlidingWindow) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 50; ++k) {
        const std::int64_t h = 11 + static_cast<std::int64_t>(rng() % 20), w = 11 + static_cast<std::int64_t>(rng() % 20);
        const Tensor a = randu({h, w}, rng);
        Tensor b = a;
        const double amp = 0.05 + 0.5 * (k / 50.0);
        for (auto& v : b.vec()) v = std::clamp(v + amp * (static_cast<double>(rng() % 1000) / 1000.0 - 0.5), 0.0, 1.0);
        EXPECT_NEAR(ssim(a, b), ssim_direct(a, b), 1e-10) << k;
    }
}

TEST(Ssim, Examples) {
    const Tensor a = lcg_image(4, 16, 16);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    EXPECT_NEAR(ssim(Tensor({16, 16}, 0.0), Tensor({16, 16}, 1.0)), oracle::kConstantSsim, 1e-15);
    EXPECT_THROW(ssim(a, Tensor({16, 15})), std::invalid_argument);
    EXPECT_THROW(ssim(Tensor({10, 16}), Tensor({10, 16})), std::invalid_argument);
    const double s = ssim(a, Tensor::full_like(a, 1.0) );
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
}

TEST(Psnr, Examples) {
    const Tensor a({10, 10}, 0.5);
    EXPECT_NEAR(psnr(a, Tensor({10, 10}, 0.6)), 20.0, 1e-9);
    EXPECT_NEAR(psnr(Tensor({4, 4}, 0.0), Tensor({4, 4}, 1.0)), 0.0, 1e-12);
    EXPECT_EQ(psnr(a, a), kPsnrCap);
    EXPECT_THROW(psnr(a, Tensor({10, 11})), std::invalid_argument);
}

TEST(Nmse, Examples) {
    const Tensor ref = lcg_image(5, 8, 8);
    EXPECT_EQ(nmse(ref, ref), 0.0);
    EXPECT_EQ(nmse(Tensor::zeros_like(ref), ref), 1.0);
    Tensor twice = ref;
    for (auto& v : twice.vec()) v *= 2.0;
    EXPECT_EQ(nmse(twice, ref), 1.0);
    EXPECT_THROW(nmse(ref, Tensor::zeros_like(ref)), std::invalid_argument);
}

TEST(Shared, PsnrAndNmseFromOneMse) {
    std::mt19937_64 rng(2);
    const Tensor a = randu({13, 17}, rng), b = randu({13, 17}, rng);
    const ErrorStats s = error_stats(a, b);
    double sse = 0.0, e = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        sse += (a[i] - b[i]) * (a[i] - b[i]);
        e += b[i] * b[i];
    }
    EXPECT_NEAR(s.sse, sse, 1e-12);
    EXPECT_NEAR(s.ref_energy, e, 1e-12);
    EXPECT_EQ(psnr(a, b), psnr_from(s));
    EXPECT_EQ(nmse(a, b), nmse_from(s));
    EXPECT_NEAR(psnr(a, b), -10 * std::log10(s.mse()), 1e-12);
    EXPECT_NEAR(nmse(a, b), s.mse() * a.size() / e, 1e-12);
}

TEST(Perceptual, IdentitySymmetryDeterminism) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 5; ++k) {
        const Tensor a = randu({32, 32}, rng), b = randu({32, 32}, rng);
        EXPECT_EQ(perceptual_distance(a, a), 0.0);
        EXPECT_NEAR(perceptual_distance(a, b), perceptual_distance(b, a), 1e-12);
        EXPECT_GT(perceptual_distance(a, b), 0.0);
        EXPECT_EQ(perceptual_distance(a, b, 4), perceptual_distance(a, b, 4));
    }
    EXPECT_THROW(perceptual_distance(Tensor({8, 8}), Tensor({8, 9})), std::invalid_argument);
}

TEST(Perceptual, MonotoneInNoiseLevel) {
    const Tensor a = lcg_image(6, 32, 32);
    std::mt19937_64 rng(4);
    std::vector<double> mean(3, 0.0);
    const std::vector<double> eps{0.01, 0.05, 0.1};
    for (int draw = 0; draw < 20; ++draw) {
        const Tensor n = tu::randn({32, 32}, rng);
        for (std::size_t k = 0; k < eps.size(); ++k) {
            Tensor b = a;
            for (std::int64_t i = 0; i < b.size(); ++i) b[i] += eps[k] * n[i];
            mean[k] += perceptual_distance(a, b) / 20.0;
        }
    }
    EXPECT_LE(mean[0], mean[1]);
    EXPECT_LE(mean[1], mean[2]);
}

TEST(Permutation, OnlyPixelwiseMetricsAreInvariant) {
    const Tensor a = lcg_image(7, 24, 24), b = noisy_copy(a, 8);
    std::vector<std::int64_t> perm(static_cast<std::size_t>(a.size()));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(5);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor pa = permuted(a, perm), pb = permuted(b, perm);
    EXPECT_NEAR(psnr(pa, pb), psnr(a, b), 1e-10);
    EXPECT_NEAR(nmse(pa, pb), nmse(a, b), 1e-12);
    EXPECT_GT(std::abs(ssim(pa, pb) - ssim(a, b)), 1e-4);
    EXPECT_GT(std::abs(perceptual_distance(pa, pb) - perceptual_distance(a, b)), 1e-6);
}

TEST(Report, AggregatesAndTests) {
    EvalReport rep;
    std::mt19937_64 rng(6);
    for (const std::string m : {"ours", "base"})
        for (int s = 0; s < 6; ++s) {
            SliceRecord r;
            r.method = m;
            r.subject = "s" + std::to_string(s % 2);
            r.slice = s;
            r.ssim = 0.8 + 0.01 * s + (m == "ours" ? 0.05 : 0.0) + 0.001 * static_cast<double>(rng() % 10);
            r.psnr = 20 + s;
            r.nmse = 0.1 * (s + 1);
            r.lpips_proxy = 0.01 * static_cast<double>(rng() % 10);
            rep.per_slice.push_back(r);
        }
    rep.finalize();
    EXPECT_EQ(rep.methods(), (std::vector<std::string>{"ours", "base"}));
    for (const auto& m : rep.methods())
        for (const auto& name : kMetricNames) {
            std::vector<double> v;
            for (const auto& r : rep.per_slice)
                if (r.method == m) v.push_back(metric_value(r, name));
            double mean = 0.0, var = 0.0;
            for (double x : v) mean += x / v.size();
            for (double x : v) var += (x - mean) * (x - mean) / (v.size() - 1);
            const auto& agg = rep.aggregate(m, name);
            EXPECT_NEAR(agg.mean, mean, 1e-12);
            EXPECT_NEAR(agg.std, std::sqrt(var), 1e-12);
            EXPECT_EQ(agg.n, 6);
        }
    bool saw_degenerate = false, saw_ssim = false;
    for (const auto& t : rep.tests) {
        if (t.metric == "psnr") saw_degenerate = t.degenerate;
        if (t.metric == "ssim") {
            saw_ssim = true;
            EXPECT_FALSE(t.degenerate);
            EXPECT_LT(t.p, 0.05);
        }
    }
    EXPECT_TRUE(saw_degenerate);
    EXPECT_TRUE(saw_ssim);
    const std::string table = rep.format_table();
    EXPECT_NE(table.find("±"), std::string::npos);
    EXPECT_NE(table.find("ours"), std::string::npos);

    const auto dir = tu::temp_dir("report");
    rep.write_json(dir / "r.json");
    rep.write_slices_tsv(dir / "s.tsv");
    std::ifstream in(dir / "r.json");
    const auto j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("per_slice").size(), 12u);
    std::ifstream tsv(dir / "s.tsv");
    int lines = 0;
    for (std::string line; std::getline(tsv, line);) ++lines;
    EXPECT_EQ(lines, 13);
    std::filesystem::remove_all(dir);
}

TEST(Report, EvaluateSliceIdentity) {
    const Tensor a = lcg_image(9, 16, 16);
    const auto r = evaluate_slice(a, a);
    EXPECT_NEAR(r.ssim, 1.0, 1e-12);
    EXPECT_EQ(r.psnr, kPsnrCap);
    EXPECT_EQ(r.nmse, 0.0);
    EXPECT_EQ(r.lpips_proxy, 0.0);
}
