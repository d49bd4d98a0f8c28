// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "petdiff/autograd.hpp"
#include "test_util.hpp"

using namespace petdiff;
using ag::Var;
using tu::check_gradient;
using tu::randn;

namespace {

// Reduces any output to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
struct Probe {
    Tensor w;
    Var operator()(const Var& y) const { return ag::mse(y, Var(w)); }
};

void expect_grads(const std::vector<Var>& leaves, const std::function<Var()>& build, double tol = 1e-6) {
    Var loss = build();
    for (auto v : leaves) v.zero_grad();
    loss = build();
    loss.backward();
    for (const auto& leaf : leaves) {
        const Tensor analytic = leaf.grad();
        auto r = check_gradient(leaf, analytic, [&] {
            ag::NoGradGuard ng;
            return build().value()[0];
        });
        EXPECT_LT(r.max_rel_error, tol) << "leaf of shape " << shape_str(leaf.shape());
    }
}

}  // namespace

TEST(Tensor, ShapeAndReductions) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.size(), 6);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_DOUBLE_EQ(t.sum(), 21.0);
    EXPECT_DOUBLE_EQ(t.min(), 1.0);
    EXPECT_DOUBLE_EQ(t.max(), 6.0);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
    EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3);
    EXPECT_THROW(t.reshaped({4, 2}), std::invalid_argument);
}

TEST(Tensor, FiniteChecks) {
    Tensor t({3}, {0.0, 1.0, 2.0});
    EXPECT_TRUE(t.all_finite());
    t[1] = std::nan("");
    EXPECT_TRUE(t.any_nan());
    EXPECT_FALSE(t.all_finite());
}

TEST(Autograd, Conv2dGradients) {
    std::mt19937_64 rng(1);
    Var x(randn({2, 3, 5, 5}, rng), true), w(randn({4, 3, 3, 3}, rng), true), b(randn({4}, rng), true);
    Probe p{randn({2, 4, 5, 5}, rng)};
    expect_grads({x, w, b}, [&] { return p(ag::conv2d(x, w, b, 1)); });
}

TEST(Autograd, Conv2dMatchesDirectSum) {
    std::mt19937_64 rng(2);
    Tensor x = randn({1, 2, 4, 4}, rng), w = randn({3, 2, 3, 3}, rng), b = randn({3}, rng);
    Tensor y = ag::conv2d(Var(x), Var(w), Var(b), 1).value();
    for (int o = 0; o < 3; ++o)
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                double s = b[o];
                for (int c = 0; c < 2; ++c)
                    for (int ki = 0; ki < 3; ++ki)
                        for (int kj = 0; kj < 3; ++kj) {
                            const int ii = i + ki - 1, jj = j + kj - 1;
                            if (ii < 0 || jj < 0 || ii >= 4 || jj >= 4) continue;
                            s += w[((o * 2 + c) * 3 + ki) * 3 + kj] * x[(c * 4 + ii) * 4 + jj];
                        }
                EXPECT_NEAR(y[(o * 4 + i) * 4 + j], s, 1e-12);
            }
}

TEST(Autograd, LinearFilmGroupNormSilu) {
    std::mt19937_64 rng(3);
    Var x(randn({2, 4, 3, 3}, rng), true), g(randn({4}, rng, 0.5), true), be(randn({4}, rng), true);
    Var sc(randn({2, 4}, rng, 0.3), true), sh(randn({2, 4}, rng), true);
    Var in(randn({2, 5}, rng), true), lw(randn({6, 5}, rng), true), lb(randn({6}, rng), true);
    Probe p{randn({2, 4, 3, 3}, rng)};
    expect_grads({x, g, be, sc, sh},
                 [&] { return p(ag::silu(ag::film(ag::group_norm(x, 2, g, be), sc, sh))); }, 1e-5);
    Probe q{randn({2, 6}, rng)};
    expect_grads({in, lw, lb}, [&] { return q(ag::linear(in, lw, lb)); });
}

TEST(Autograd, PoolUpsampleConcatSlice) {
    std::mt19937_64 rng(4);
    Var a(randn({1, 2, 4, 4}, rng), true), b(randn({1, 3, 4, 4}, rng), true);
    Probe p{randn({1, 3, 4, 4}, rng)};
    expect_grads({a, b}, [&] {
        Var c = ag::concat_channels({a, b});
        return p(ag::upsample_nearest2(ag::avg_pool2(ag::slice_channels(c, 1, 4))));
    });
}

TEST(Autograd, SpatialAttention) {
    std::mt19937_64 rng(5);
    Var qkv(randn({2, 12, 3, 3}, rng, 0.7), true);
    Probe p{randn({2, 4, 3, 3}, rng)};
    expect_grads({qkv}, [&] { return p(ag::spatial_attention(qkv, 2)); }, 1e-5);
}

TEST(Autograd, WeightedSumAndAddChannelVector) {
    std::mt19937_64 rng(6);
    Var x(randn({2, 3, 2, 2}, rng), true), v(randn({2, 3}, rng), true);
    Probe p{randn({2, 3, 2, 2}, rng)};
    expect_grads({x, v}, [&] {
        Var y = ag::add_channel_vector(x, v);
        return ag::weighted_sum({{0.4, p(y)}, {0.2, ag::mse(ag::scale(y, 2.0), x)}});
    });
}

TEST(Autograd, DropoutIsIdentityAtZeroAndScalesKept) {
    std::mt19937_64 rng(7);
    Tensor t = randn({1, 1, 20, 20}, rng);
    std::mt19937_64 r2(1);
    const Tensor y0 = ag::dropout(Var(t), 0.0, r2).value();
    EXPECT_EQ(tu::max_abs_diff(y0, t), 0.0);
    const Tensor y = ag::dropout(Var(t), 0.5, r2).value();
    for (std::int64_t i = 0; i < t.size(); ++i)
        EXPECT_TRUE(y[i] == 0.0 || std::abs(y[i] - 2.0 * t[i]) < 1e-12);
}

TEST(Autograd, NoGradGuardStopsRecording) {
    Var x(Tensor({1, 1, 2, 2}, 1.0), true);
    {
        ag::NoGradGuard g;
        Var y = ag::silu(x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(ag::silu(x).requires_grad());
}
