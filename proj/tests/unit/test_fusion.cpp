// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "petdiff/fusion.hpp"
#include "test_util.hpp"

using namespace petdiff;
using namespace petdiff::fusion;
using tu::randu;

namespace {

OrientedVolume oriented(Tensor t, Orientation o) { return {std::move(t), o, "s"}; }

std::vector<Tensor> native_slices(const Tensor& vol, Orientation o) {
    std::vector<Tensor> out;
    const auto axis = static_cast<std::size_t>(data::orientation_axis(o));
    for (std::int64_t i = 0; i < vol.dim(axis); ++i) out.push_back(data::take_slice(vol, o, i));
    return out;
}

}  // namespace

TEST(Stack, UnstackInverts) {
    std::mt19937_64 rng(1);
    for (auto o : {Orientation::axial, Orientation::coronal, Orientation::sagittal}) {
        std::vector<Tensor> slices;
        for (int i = 0; i < 5; ++i) slices.push_back(randu({6, 7}, rng));
        const auto back = unstack_orientation(stack_orientation(slices, o));
        ASSERT_EQ(back.size(), slices.size());
        for (std::size_t i = 0; i < slices.size(); ++i) EXPECT_TRUE(bitwise_equal(back[i], slices[i]));
    }
}

TEST(Stack, NativeSlicesGiveSameCanonicalVolume) {
    std::mt19937_64 rng(2);
    const Tensor vol = randu({5, 6, 7}, rng);
    for (auto o : {Orientation::axial, Orientation::coronal, Orientation::sagittal}) {
        const auto v = stack_orientation(native_slices(vol, o), o);
        EXPECT_TRUE(bitwise_equal(v.data, vol)) << data::to_string(o);
        EXPECT_EQ(v.orientation, o);
    }
}

TEST(Stack, SingleSliceAndErrors) {
    const auto v = stack_orientation({Tensor({4, 4}, 0.5)}, Orientation::axial);
    EXPECT_EQ(v.data.shape(), (Shape{1, 4, 4}));
    EXPECT_THROW(stack_orientation({}, Orientation::axial), std::invalid_argument);
    EXPECT_THROW(stack_orientation({Tensor({4, 4}), Tensor({4, 5})}, Orientation::axial), std::invalid_argument);
}

TEST(Haar, RoundTripAndOrthonormal) {
    std::mt19937_64 rng(3);
    const Tensor v = tu::randn({16, 8, 32}, rng);
    for (int levels : {0, 1, 2, 3}) {
        const Tensor c = haar_forward(v, levels);
        EXPECT_LT(tu::max_abs_diff(haar_inverse(c, levels), v), 1e-12);
        double e1 = 0.0, e2 = 0.0;
        for (std::int64_t i = 0; i < v.size(); ++i) {
            e1 += v[i] * v[i];
            e2 += c[i] * c[i];
        }
        EXPECT_NEAR(e1, e2, 1e-9 * e1);
    }
    EXPECT_THROW(haar_forward(Tensor({6, 8, 8}), 2), std::invalid_argument);
}

TEST(Haar, ConstantVolumeConcentratesInApproximation) {
    const Tensor c = haar_forward(Tensor({4, 4, 4}, 1.0), 2);
    EXPECT_NEAR(c[0], 8.0, 1e-12);
    for (std::int64_t i = 1; i < c.size(); ++i) EXPECT_NEAR(c[i], 0.0, 1e-12);
}

TEST(Haar, Depth) {
    EXPECT_EQ(haar_depth({64, 64, 64}), 5);
    EXPECT_EQ(haar_depth({16, 32, 8}), 2);
    EXPECT_EQ(haar_depth({1, 4, 4}), 0);
}

TEST(Fuse, IdenticalVolumesAreReturned) {
    std::mt19937_64 rng(4);
    const Tensor v = randu({16, 16, 16}, rng);
    const Tensor f = fuse_volumes({oriented(v, Orientation::axial), oriented(v, Orientation::coronal),
                                   oriented(v, Orientation::sagittal)});
    EXPECT_LT(tu::max_abs_diff(f, v), 1e-6);
    EXPECT_LT(tu::max_abs_diff(fuse_volumes({oriented(v, Orientation::axial)}), v), 1e-6);
}

TEST(Fuse, EqualsElementwiseMean) {
    std::mt19937_64 rng(5);
    for (const Shape& s : {Shape{8, 8, 8}, Shape{12, 10, 9}, Shape{5, 17, 3}}) {
        const Tensor a = randu(s, rng), b = randu(s, rng), c = randu(s, rng);
        const Tensor f = fuse_volumes(
            {oriented(a, Orientation::axial), oriented(b, Orientation::coronal), oriented(c, Orientation::sagittal)});
        ASSERT_EQ(f.shape(), s);
        double worst = 0.0;
        for (std::int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(f[i] - (a[i] + b[i] + c[i]) / 3.0));
        EXPECT_LT(worst, 1e-6) << shape_str(s);
    }
}

TEST(Fuse, PermutationInvariantAndClipped) {
    std::mt19937_64 rng(6);
    const Tensor a = randu({8, 8, 8}, rng, -0.5, 1.5), b = randu({8, 8, 8}, rng), c = randu({8, 8, 8}, rng, 0.5, 2.0);
    std::vector<OrientedVolume> v{oriented(a, Orientation::axial), oriented(b, Orientation::coronal),
                                  oriented(c, Orientation::sagittal)};
    const Tensor ref = fuse_volumes(v);
    EXPECT_GE(ref.min(), 0.0);
    EXPECT_LE(ref.max(), 1.0);
    std::vector<int> idx{0, 1, 2};
    while (std::next_permutation(idx.begin(), idx.end())) {
        const Tensor f = fuse_volumes({v[static_cast<std::size_t>(idx[0])], v[static_cast<std::size_t>(idx[1])],
                                       v[static_cast<std::size_t>(idx[2])]});
        EXPECT_LT(tu::max_abs_diff(f, ref), 1e-12);
    }
}

TEST(Fuse, Errors) {
    const auto a = oriented(Tensor({4, 4, 4}), Orientation::axial);
    EXPECT_THROW(fuse_volumes({a, oriented(Tensor({4, 4, 5}), Orientation::coronal), a}), std::invalid_argument);
    EXPECT_THROW(fuse_volumes({a, a}), std::invalid_argument);
    EXPECT_THROW(fuse_volumes({}), std::invalid_argument);
}

TEST(Pad, SymmetricPadThenCrop) {
    std::mt19937_64 rng(7);
    const Tensor v = randu({5, 6, 3}, rng);
    const Tensor p = symmetric_pad(v, 4);
    EXPECT_EQ(p.shape(), (Shape{8, 8, 4}));
    EXPECT_TRUE(bitwise_equal(crop(p, v.shape()), v));
    // Mirror across the last plane along D.
    EXPECT_EQ(p[5 * 32 + 0], v[4 * 18 + 0]);
    EXPECT_EQ(p[6 * 32 + 0], v[3 * 18 + 0]);
}
