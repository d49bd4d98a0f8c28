// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace petdiff::fusion {

namespace {

constexpr double kInvSqrt2 = 1.0 / std::numbers::sqrt2;

std::int64_t idx(const Shape& s, std::int64_t d, std::int64_t h, std::int64_t w) { return (d * s[1] + h) * s[2] + w; }

// One Haar level along `axis` over the sub-box [0, ext) of a volume.
void haar_axis(Tensor& v, int axis, const std::array<std::int64_t, 3>& ext, bool inverse) {
    const Shape& s = v.shape();
    const std::int64_t n = ext[static_cast<std::size_t>(axis)], half = n / 2;
    std::vector<double> line(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
    std::array<std::int64_t, 3> lim = ext;
    lim[static_cast<std::size_t>(axis)] = 1;
    for (std::int64_t a = 0; a < lim[0]; ++a)
        for (std::int64_t b = 0; b < lim[1]; ++b)
            for (std::int64_t c = 0; c < lim[2]; ++c) {
                auto at = [&](std::int64_t i) -> double& {
                    std::array<std::int64_t, 3> p{a, b, c};
                    p[static_cast<std::size_t>(axis)] = i;
                    return v[idx(s, p[0], p[1], p[2])];
                };
                for (std::int64_t i = 0; i < n; ++i) line[static_cast<std::size_t>(i)] = at(i);
                for (std::int64_t i = 0; i < half; ++i) {
                    const auto k = static_cast<std::size_t>(i);
                    if (!inverse) {
                        const double x0 = line[2 * k], x1 = line[2 * k + 1];
                        out[k] = (x0 + x1) * kInvSqrt2;
                        out[k + static_cast<std::size_t>(half)] = (x0 - x1) * kInvSqrt2;
                    } else {
                        const double lo = line[k], hi = line[k + static_cast<std::size_t>(half)];
                        out[2 * k] = (lo + hi) * kInvSqrt2;
                        out[2 * k + 1] = (lo - hi) * kInvSqrt2;
                    }
                }
                for (std::int64_t i = 0; i < n; ++i) at(i) = out[static_cast<std::size_t>(i)];
            }
}

void require_volume(const Tensor& v, const char* what) {
    if (v.rank() != 3) throw std::invalid_argument(std::string(what) + ": expected a (D, H, W) volume");
}

}  // namespace

OrientedVolume stack_orientation(const std::vector<Tensor>& slices, Orientation o, std::string subject_id) {
    if (slices.empty()) throw std::invalid_argument("stack_orientation: empty slice list");
    const Shape& s = slices.front().shape();
    if (s.size() != 2) throw std::invalid_argument("stack_orientation: slices must be 2D");
    for (const auto& sl : slices)
        if (sl.shape() != s)
            throw std::invalid_argument("stack_orientation: heterogeneous slice shapes " + shape_str(s) + " vs " +
                                        shape_str(sl.shape()));
    const auto n = static_cast<std::int64_t>(slices.size());
    OrientedVolume v;
    v.orientation = o;
    v.subject_id = std::move(subject_id);
    switch (o) {
        case Orientation::axial: v.data = Tensor({n, s[0], s[1]}); break;
        case Orientation::coronal: v.data = Tensor({s[0], n, s[1]}); break;
        case Orientation::sagittal: v.data = Tensor({s[0], s[1], n}); break;
    }
    const Shape& vs = v.data.shape();
    for (std::int64_t k = 0; k < n; ++k) {
        const Tensor& sl = slices[static_cast<std::size_t>(k)];
        for (std::int64_t i = 0; i < s[0]; ++i)
            for (std::int64_t j = 0; j < s[1]; ++j) {
                const double x = sl[i * s[1] + j];
                switch (o) {
                    case Orientation::axial: v.data[idx(vs, k, i, j)] = x; break;
                    case Orientation::coronal: v.data[idx(vs, i, k, j)] = x; break;
                    case Orientation::sagittal: v.data[idx(vs, i, j, k)] = x; break;
                }
            }
    }
    return v;
}

std::vector<Tensor> unstack_orientation(const OrientedVolume& vol) {
    require_volume(vol.data, "unstack_orientation");
    const std::int64_t n = vol.data.dim(static_cast<std::size_t>(data::orientation_axis(vol.orientation)));
    std::vector<Tensor> out;
    for (std::int64_t k = 0; k < n; ++k) out.push_back(data::take_slice(vol.data, vol.orientation, k));
    return out;
}

int haar_depth(const Shape& shape) {
    const std::int64_t m = *std::min_element(shape.begin(), shape.end());
    if (m < 1) throw std::invalid_argument("haar_depth: empty volume");
    const int lg = static_cast<int>(std::floor(std::log2(static_cast<double>(m))));
    return std::max(0, lg - 1);
}

Tensor haar_forward(const Tensor& vol, int levels) {
    require_volume(vol, "haar_forward");
    for (auto d : vol.shape())
        if (d % (std::int64_t{1} << levels))
            throw std::invalid_argument("haar_forward: shape " + shape_str(vol.shape()) + " not divisible by 2^" +
                                        std::to_string(levels));
    Tensor v = vol;
    std::array<std::int64_t, 3> ext{vol.dim(0), vol.dim(1), vol.dim(2)};
    for (int l = 0; l < levels; ++l) {
        for (int a = 0; a < 3; ++a) haar_axis(v, a, ext, false);
        for (auto& e : ext) e /= 2;
    }
    return v;
}

Tensor haar_inverse(const Tensor& coeffs, int levels) {
    require_volume(coeffs, "haar_inverse");
    Tensor v = coeffs;
    for (int l = levels - 1; l >= 0; --l) {
        std::array<std::int64_t, 3> ext{coeffs.dim(0) >> l, coeffs.dim(1) >> l, coeffs.dim(2) >> l};
        for (int a = 2; a >= 0; --a) haar_axis(v, a, ext, true);
    }
    return v;
}

Tensor symmetric_pad(const Tensor& vol, std::int64_t multiple) {
    require_volume(vol, "symmetric_pad");
    const Shape& s = vol.shape();
    Shape p = s;
    for (auto& d : p) d = (d + multiple - 1) / multiple * multiple;
    if (p == s) return vol;
    auto mirror = [](std::int64_t i, std::int64_t n) {
        const std::int64_t period = 2 * n;
        i %= period;
        return i < n ? i : period - 1 - i;
    };
    Tensor out(p);
    for (std::int64_t d = 0; d < p[0]; ++d)
        for (std::int64_t h = 0; h < p[1]; ++h)
            for (std::int64_t w = 0; w < p[2]; ++w)
                out[idx(p, d, h, w)] = vol[idx(s, mirror(d, s[0]), mirror(h, s[1]), mirror(w, s[2]))];
    return out;
}

Tensor crop(const Tensor& vol, const Shape& shape) {
    require_volume(vol, "crop");
    Tensor out(shape);
    for (std::int64_t d = 0; d < shape[0]; ++d)
        for (std::int64_t h = 0; h < shape[1]; ++h)
            for (std::int64_t w = 0; w < shape[2]; ++w) out[idx(shape, d, h, w)] = vol[idx(vol.shape(), d, h, w)];
    return out;
}

Tensor fuse_volumes(const std::vector<OrientedVolume>& vols) {
    if (vols.size() != 1 && vols.size() != 3)
        throw std::invalid_argument("fuse_volumes: expected 1 or 3 volumes, got " + std::to_string(vols.size()));
    const Shape& s = vols.front().data.shape();
    for (const auto& v : vols) {
        require_volume(v.data, "fuse_volumes");
        if (v.data.shape() != s)
            throw std::invalid_argument("fuse_volumes: canonical shapes differ " + shape_str(s) + " vs " +
                                        shape_str(v.data.shape()));
    }
    const int levels = haar_depth(s);
    const std::int64_t mult = std::int64_t{1} << levels;
    Tensor acc;
    for (const auto& v : vols) {
        const Tensor c = haar_forward(symmetric_pad(v.data, mult), levels);
        if (acc.empty()) acc = Tensor(c.shape());
        for (std::int64_t i = 0; i < c.size(); ++i) acc[i] += c[i];
    }
    for (auto& x : acc.vec()) x /= static_cast<double>(vols.size());
    Tensor out = crop(haar_inverse(acc, levels), s);
    for (auto& x : out.vec()) x = std::clamp(x, 0.0, 1.0);
    return out;
}

}  // namespace petdiff::fusion
