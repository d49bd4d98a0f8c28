// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "petdiff/autograd.hpp"
#include "petdiff/errors.hpp"

namespace petdiff::metrics {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_image(const Tensor& a, const Tensor& b, const char* what) {
    require_same_shape(a, b, what);
    if (a.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected (H, W) images");
}

std::vector<double> gaussian_window() {
    std::vector<double> g(kWin);
    double s = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - kWin / 2;
        s += g[static_cast<std::size_t>(i)] = std::exp(-0.5 * x * x / (kSigma * kSigma));
    }
    for (auto& v : g) v /= s;
    return g;
}

// Separable valid-mode filtering of an (H, W) image.
Tensor filter_valid(const Tensor& x, const std::vector<double>& g) {
    const std::int64_t H = x.dim(0), W = x.dim(1), h = H - kWin + 1, w = W - kWin + 1;
    Tensor rows({H, w});
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += g[static_cast<std::size_t>(k)] * x[i * W + j + k];
            rows[i * w + j] = acc;
        }
    Tensor out({h, w});
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            double acc = 0.0;
            for (int k = 0; k < kWin; ++k) acc += g[static_cast<std::size_t>(k)] * rows[(i + k) * w + j];
            out[i * w + j] = acc;
        }
    return out;
}

struct Featurizer {
    std::vector<ag::Var> weights, biases;
    explicit Featurizer(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const int widths[] = {1, 8, 16, 32};
        for (int l = 0; l < 3; ++l) {
            const int in = widths[l], out = widths[l + 1];
            std::normal_distribution<double> n(0.0, std::sqrt(2.0 / (in * 9)));
            Tensor w({out, in, 3, 3});
            for (auto& v : w.vec()) v = n(rng);
            Tensor b({out});
            for (auto& v : b.vec()) v = 0.1 * n(rng);
            weights.emplace_back(std::move(w));
            biases.emplace_back(std::move(b));
        }
    }
    std::vector<Tensor> features(const Tensor& img) const {
        ag::NoGradGuard ng;
        Tensor x = img.reshaped({1, 1, img.dim(0), img.dim(1)});
        for (auto& v : x.vec()) v = 2.0 * v - 1.0;
        ag::Var h(std::move(x));
        std::vector<Tensor> out;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (l > 0 && h.shape()[2] >= 2 && h.shape()[2] % 2 == 0 && h.shape()[3] % 2 == 0) h = ag::avg_pool2(h);
            Tensor y = ag::conv2d(h, weights[l], biases[l], 1).value();
            for (auto& v : y.vec()) v = std::tanh(v);
            h = ag::Var(y);
            out.push_back(std::move(y));
        }
        return out;
    }
};

void unit_normalize_channels(Tensor& f) {
    const std::int64_t C = f.dim(1), P = f.dim(2) * f.dim(3);
    for (std::int64_t p = 0; p < P; ++p) {
        double s = 0.0;
        for (std::int64_t c = 0; c < C; ++c) s += f[c * P + p] * f[c * P + p];
        const double inv = 1.0 / (std::sqrt(s) + 1e-10);
        for (std::int64_t c = 0; c < C; ++c) f[c * P + p] *= inv;
    }
}

}  // namespace

ErrorStats error_stats(const Tensor& a, const Tensor& ref) {
    require_same_shape(a, ref, "error_stats");
    if (a.empty()) throw std::invalid_argument("error_stats: empty image");
    ErrorStats s;
    s.n = a.size();
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - ref[i];
        s.sse += d * d;
        s.ref_energy += ref[i] * ref[i];
    }
    return s;
}

double ssim(const Tensor& a, const Tensor& b) {
    require_image(a, b, "ssim");
    if (a.dim(0) < kWin || a.dim(1) < kWin) throw std::invalid_argument("ssim: images must be at least 11x11");
    static const std::vector<double> g = gaussian_window();
    Tensor aa(a.shape()), bb(a.shape()), ab(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const Tensor ma = filter_valid(a, g), mb = filter_valid(b, g);
    const Tensor saa = filter_valid(aa, g), sbb = filter_valid(bb, g), sab = filter_valid(ab, g);
    double total = 0.0;
    for (std::int64_t i = 0; i < ma.size(); ++i) {
        const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
        total += ((2.0 * ma[i] * mb[i] + kC1) * (2.0 * cov + kC2)) /
                 ((ma[i] * ma[i] + mb[i] * mb[i] + kC1) * (va + vb + kC2));
    }
    return total / static_cast<double>(ma.size());
}

double psnr_from(const ErrorStats& s) {
    const double m = s.mse();
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

double psnr(const Tensor& a, const Tensor& b) { return psnr_from(error_stats(a, b)); }

double nmse_from(const ErrorStats& s) {
    if (s.ref_energy <= 0.0) throw std::invalid_argument("nmse: all-zero reference");
    return s.sse / s.ref_energy;
}

double nmse(const Tensor& a, const Tensor& ref) { return nmse_from(error_stats(a, ref)); }

double perceptual_distance(const Tensor& a, const Tensor& b, std::uint64_t featurizer_seed) {
    require_image(a, b, "perceptual_distance");
    const Featurizer f(featurizer_seed);
    auto fa = f.features(a), fb = f.features(b);
    double total = 0.0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        unit_normalize_channels(fa[l]);
        unit_normalize_channels(fb[l]);
        const std::int64_t P = fa[l].dim(2) * fa[l].dim(3);
        double s = 0.0;
        for (std::int64_t i = 0; i < fa[l].size(); ++i) s += (fa[l][i] - fb[l][i]) * (fa[l][i] - fb[l][i]);
        total += s / static_cast<double>(P);
    }
    return total / static_cast<double>(fa.size());
}

TTest paired_ttest(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw std::invalid_argument("paired_ttest: length mismatch");
    const auto n = xs.size();
    if (n < 2) throw std::invalid_argument("paired_ttest: need at least two pairs");
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = xs[i] - ys[i];
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(n - 1);
    if (!(var > 0.0)) throw std::domain_error("paired_ttest: differences have zero variance");
    TTest r;
    r.df = static_cast<int>(n - 1);
    r.mean_diff = mean;
    r.t = mean / std::sqrt(var / static_cast<double>(n));
    const boost::math::students_t dist(r.df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t))));
    return r;
}

SliceRecord evaluate_slice(const Tensor& pred, const Tensor& ref, std::uint64_t featurizer_seed) {
    SliceRecord r;
    const ErrorStats s = error_stats(pred, ref);
    r.ssim = ssim(pred, ref);
    r.psnr = psnr_from(s);
    r.nmse = nmse_from(s);
    r.lpips_proxy = perceptual_distance(pred, ref, featurizer_seed);
    return r;
}

double metric_value(const SliceRecord& r, const std::string& metric) {
    if (metric == "ssim") return r.ssim;
    if (metric == "psnr") return r.psnr;
    if (metric == "nmse") return r.nmse;
    if (metric == "lpips_proxy") return r.lpips_proxy;
    throw std::invalid_argument("unknown metric '" + metric + "'");
}

std::vector<std::string> EvalReport::methods() const {
    std::vector<std::string> m;
    for (const auto& r : per_slice)
        if (std::find(m.begin(), m.end(), r.method) == m.end()) m.push_back(r.method);
    return m;
}

void EvalReport::finalize() {
    aggregates.clear();
    tests.clear();
    const auto ms = methods();
    for (const auto& m : ms)
        for (const auto& metric : kMetricNames) {
            Aggregate a{m, metric};
            std::vector<double> v;
            for (const auto& r : per_slice)
                if (r.method == m) v.push_back(metric_value(r, metric));
            a.n = static_cast<std::int64_t>(v.size());
            for (double x : v) a.mean += x;
            a.mean /= static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - a.mean) * (x - a.mean);
            a.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
            aggregates.push_back(a);
        }
    // Pairing key: (subject, orientation, slice).
    for (std::size_t i = 0; i < ms.size(); ++i)
        for (std::size_t j = i + 1; j < ms.size(); ++j)
            for (const auto& metric : kMetricNames) {
                std::map<std::tuple<std::string, std::string, int>, double> a;
                for (const auto& r : per_slice)
                    if (r.method == ms[i]) a[{r.subject, r.orientation, r.slice}] = metric_value(r, metric);
                std::vector<double> xs, ys;
                for (const auto& r : per_slice)
                    if (r.method == ms[j]) {
                        auto it = a.find({r.subject, r.orientation, r.slice});
                        if (it == a.end()) continue;
                        xs.push_back(it->second);
                        ys.push_back(metric_value(r, metric));
                    }
                TestRow row{ms[i], ms[j], metric};
                try {
                    const TTest t = paired_ttest(xs, ys);
                    row.t = t.t;
                    row.p = t.p;
                } catch (const std::exception&) {
                    row.degenerate = true;
                }
                tests.push_back(row);
            }
}

const Aggregate& EvalReport::aggregate(const std::string& method, const std::string& metric) const {
    for (const auto& a : aggregates)
        if (a.method == method && a.metric == metric) return a;
    throw std::out_of_range("no aggregate for " + method + "/" + metric);
}

void EvalReport::write_json(const std::filesystem::path& path) const {
    nlohmann::ordered_json j;
    j["per_slice"] = nlohmann::ordered_json::array();
    for (const auto& r : per_slice)
        j["per_slice"].push_back({{"method", r.method},
                                  {"subject", r.subject},
                                  {"orientation", r.orientation},
                                  {"slice", r.slice},
                                  {"ssim", r.ssim},
                                  {"psnr", r.psnr},
                                  {"nmse", r.nmse},
                                  {"lpips_proxy", r.lpips_proxy}});
    j["aggregates"] = nlohmann::ordered_json::array();
    for (const auto& a : aggregates)
        j["aggregates"].push_back(
            {{"method", a.method}, {"metric", a.metric}, {"mean", a.mean}, {"std", a.std}, {"n", a.n}});
    j["tests"] = nlohmann::ordered_json::array();
    for (const auto& t : tests) {
        nlohmann::ordered_json row{{"method_a", t.method_a}, {"method_b", t.method_b}, {"metric", t.metric}};
        if (t.degenerate) {
            row["degenerate"] = true;
        } else {
            row["t_statistic"] = t.t;
            row["p_value"] = t.p;
        }
        j["tests"].push_back(row);
    }
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

void EvalReport::write_slices_tsv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "method\tsubject\torientation\tslice\tssim\tpsnr\tnmse\tlpips_proxy\n";
    for (const auto& r : per_slice)
        f << fmt::format("{}\t{}\t{}\t{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\n", r.method, r.subject, r.orientation, r.slice, r.ssim, r.psnr,
                         r.nmse, r.lpips_proxy);
}

std::string EvalReport::format_table() const {
    std::string s = fmt::format("{:<16}", "method");
    for (const auto& m : kMetricNames) s += fmt::format("  {:>22}", m);
    s += '\n';
    for (const auto& method : methods()) {
        s += fmt::format("{:<16}", method);
        for (const auto& m : kMetricNames) {
            const auto& a = aggregate(method, m);
            s += fmt::format("  {:>22}", fmt::format("{:.4f}±{:.4f}", a.mean, a.std));
        }
        s += '\n';
    }
    return s;
}

}  // namespace petdiff::metrics
