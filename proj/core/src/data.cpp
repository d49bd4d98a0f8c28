// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "petdiff/errors.hpp"

namespace petdiff::data {

namespace {

constexpr const char* kRawMagic = "petdiff-raw 1";

struct Ellipsoid {
    double cx, cy, cz, rx, ry, rz;
    bool contains(double x, double y, double z) const {
        const double u = (x - cx) / rx, v = (y - cy) / ry, w = (z - cz) / rz;
        return u * u + v * v + w * w <= 1.0;
    }
};

void gaussian_blur_axis(Tensor& vol, int axis, double sigma) {
    if (sigma <= 0.0) return;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double s = 0.0;
    for (int i = -radius; i <= radius; ++i) s += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= s;
    const std::int64_t D = vol.dim(0), H = vol.dim(1), W = vol.dim(2);
    const std::int64_t len = vol.dim(static_cast<std::size_t>(axis));
    const std::int64_t stride = axis == 0 ? H * W : axis == 1 ? W : 1;
    Tensor out(vol.shape());
    std::vector<double> line(static_cast<std::size_t>(len));
    for (std::int64_t d = 0; d < (axis == 0 ? 1 : D); ++d)
        for (std::int64_t h = 0; h < (axis == 1 ? 1 : H); ++h)
            for (std::int64_t w = 0; w < (axis == 2 ? 1 : W); ++w) {
                const std::int64_t base = d * H * W + h * W + w;
                for (std::int64_t i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = vol[base + i * stride];
                for (std::int64_t i = 0; i < len; ++i) {
                    double acc = 0.0;
                    for (int j = -radius; j <= radius; ++j) {
                        const std::int64_t p = i + j;
                        if (p < 0 || p >= len) continue;  // zero outside the volume
                        acc += k[static_cast<std::size_t>(j + radius)] * line[static_cast<std::size_t>(p)];
                    }
                    out[base + i * stride] = acc;
                }
            }
    vol = std::move(out);
}

double detector_center(int bins) { return 0.5 * (bins - 1); }

// Interpolation weights of pixel (i, j) at angle a: bin index and fraction.
template <typename F>
void for_each_pixel_bin(int n, int n_angles, int bins, F&& f) {
    const double c = 0.5 * (n - 1), dc = detector_center(bins);
    for (int a = 0; a < n_angles; ++a) {
        const double th = std::numbers::pi * a / n_angles;
        const double ct = std::cos(th), st = std::sin(th);
        for (int i = 0; i < n; ++i) {
            const double y = c - i;
            for (int j = 0; j < n; ++j) {
                const double x = j - c;
                const double p = x * ct + y * st + dc;
                const double fl = std::floor(p);
                const int b = static_cast<int>(fl);
                const double fr = p - fl;
                f(a, i * n + j, b, fr);
            }
        }
    }
}

double mse(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

}  // namespace

Orientation parse_orientation(std::string_view name) {
    if (name == "axial") return Orientation::axial;
    if (name == "coronal") return Orientation::coronal;
    if (name == "sagittal") return Orientation::sagittal;
    throw std::invalid_argument("unknown orientation '" + std::string(name) + "'");
}

std::string_view to_string(Orientation o) {
    switch (o) {
        case Orientation::axial: return "axial";
        case Orientation::coronal: return "coronal";
        case Orientation::sagittal: return "sagittal";
    }
    return "axial";
}

int orientation_axis(Orientation o) { return static_cast<int>(o); }

PhantomVolume generate_phantom(std::uint64_t seed, const Shape& shape, const PhantomOptions& options) {
    if (shape.size() != 3) throw std::invalid_argument("generate_phantom: shape must be (D, H, W)");
    for (auto d : shape)
        if (d < 16) throw std::invalid_argument("generate_phantom: every dimension must be >= 16, got " + shape_str(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * U(rng); };

    const double ax = 0.86 * uni(0.95, 1.03), ay = 0.92 * uni(0.95, 1.03), az = 0.80 * uni(0.95, 1.03);
    const double sx = uni(-0.03, 0.03), sy = uni(-0.03, 0.03), sz = uni(-0.03, 0.03);
    const double rot = uni(-0.15, 0.15);
    const int f1 = 6 + static_cast<int>(U(rng) * 4), f2 = 4 + static_cast<int>(U(rng) * 3);
    const double ph1 = uni(0.0, 2.0 * std::numbers::pi), ph2 = uni(0.0, 2.0 * std::numbers::pi);
    const double fold = uni(0.05, 0.08);
    const double grey_uptake = uni(0.85, 1.0);
    const double white_uptake = uni(0.25, 0.32);
    const double deep_uptake = uni(0.7, 0.8);

    const double dg = uni(0.9, 1.1), vs = uni(0.85, 1.15);
    const std::vector<Ellipsoid> deep{{-0.22, 0.05, 0.0, 0.12 * dg, 0.16 * dg, 0.12 * dg},
                                      {0.22, 0.05, 0.0, 0.12 * dg, 0.16 * dg, 0.12 * dg}};
    const std::vector<Ellipsoid> vent{{-0.09, -0.05, 0.05, 0.06 * vs, 0.22 * vs, 0.12 * vs},
                                      {0.09, -0.05, 0.05, 0.06 * vs, 0.22 * vs, 0.12 * vs}};

    int lesion_count = options.lesions;
    const double lesion_draw = U(rng);
    if (lesion_count < 0) lesion_count = lesion_draw < 0.4 ? 0 : lesion_draw < 0.8 ? 1 : 2;
    std::vector<std::array<double, 4>> lesions;
    for (int i = 0; i < lesion_count; ++i) {
        const double th = uni(0.0, 2.0 * std::numbers::pi), z = uni(-0.4, 0.4);
        const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double e = 0.78;
        lesions.push_back({e * ax * rr * std::cos(th), e * ay * rr * std::sin(th), e * az * z, uni(0.10, 0.14)});
    }

    const std::int64_t D = shape[0], H = shape[1], W = shape[2];
    PhantomVolume v;
    v.shape = shape;
    v.seed = seed;
    v.lesion_count = lesion_count;
    v.sd_pet = Tensor(shape);
    v.mri = Tensor(shape);
    v.labels = Tensor(shape);
    const double cr = std::cos(rot), sr = std::sin(rot);
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t h = 0; h < H; ++h)
            for (std::int64_t w = 0; w < W; ++w) {
                const double x0 = (w - 0.5 * (W - 1)) / (0.5 * W) - sx;
                const double y0 = (0.5 * (H - 1) - h) / (0.5 * H) - sy;
                const double z = (d - 0.5 * (D - 1)) / (0.5 * D) - sz;
                const double x = cr * x0 + sr * y0, y = -sr * x0 + cr * y0;
                const double e = std::sqrt((x / ax) * (x / ax) + (y / ay) * (y / ay) + (z / az) * (z / az));
                Tissue t = Tissue::background;
                if (e <= 1.0) t = Tissue::skull;
                if (e < 0.90) t = Tissue::ventricle;  // extra-cerebral CSF
                if (e < 0.86) {
                    const double theta = std::atan2(y, x);
                    const double phi = std::acos(std::clamp(z / std::max(e * az, 1e-9), -1.0, 1.0));
                    const double boundary = 0.70 + fold * std::sin(f1 * theta + ph1) * std::sin(f2 * phi + ph2);
                    t = e >= boundary ? Tissue::grey : Tissue::white;
                    for (const auto& el : deep)
                        if (el.contains(x, y, z)) t = Tissue::deep_grey;
                    for (const auto& el : vent)
                        if (el.contains(x, y, z)) t = Tissue::ventricle;
                    if (t == Tissue::grey)
                        for (const auto& l : lesions) {
                            const double dx = x - l[0], dy = y - l[1], dz = z - l[2];
                            if (dx * dx + dy * dy + dz * dz <= l[3] * l[3]) t = Tissue::lesion;
                        }
                }
                const std::int64_t idx = (d * H + h) * W + w;
                v.labels[idx] = static_cast<double>(t);
                double pet = 0.0, mri = 0.0;
                switch (t) {
                    case Tissue::background: break;
                    case Tissue::skull: pet = 0.12; mri = 0.30; break;
                    case Tissue::grey: pet = grey_uptake; mri = 0.50; break;
                    case Tissue::white: pet = white_uptake; mri = 0.82; break;
                    case Tissue::deep_grey: pet = deep_uptake; mri = 0.62; break;
                    case Tissue::ventricle: pet = 0.04; mri = 0.10; break;
                    case Tissue::lesion: pet = 0.45 * grey_uptake; mri = 0.50; break;
                }
                v.sd_pet[idx] = pet;
                v.mri[idx] = mri;
            }
    for (int axis = 0; axis < 3; ++axis) gaussian_blur_axis(v.sd_pet, axis, options.pet_blur_sigma);
    for (std::int64_t i = 0; i < v.sd_pet.size(); ++i)
        v.sd_pet[i] = v.labels[i] == 0.0 ? 0.0 : std::clamp(v.sd_pet[i], 0.0, 1.0);
    return v;
}

int detector_bins(int n) {
    int b = static_cast<int>(std::ceil(std::numbers::sqrt2 * (n - 1))) + 3;
    if (b % 2 == 0) ++b;
    return b;
}

Tensor forward_project(const Tensor& slice, int n_angles) {
    if (slice.rank() != 2 || slice.dim(0) != slice.dim(1)) throw std::invalid_argument("forward_project: slice must be square");
    if (n_angles < 1) throw std::invalid_argument("forward_project: n_angles must be >= 1");
    for (double v : slice.vec())
        if (!(v >= 0.0)) throw std::invalid_argument("forward_project: negative or NaN activity");
    const int n = static_cast<int>(slice.dim(0)), bins = detector_bins(n);
    Tensor sino({n_angles, bins});
    for_each_pixel_bin(n, n_angles, bins, [&](int a, int pix, int b, double fr) {
        const double v = slice[pix];
        if (v == 0.0) return;
        sino[static_cast<std::int64_t>(a) * bins + b] += (1.0 - fr) * v;
        if (fr > 0.0) sino[static_cast<std::int64_t>(a) * bins + b + 1] += fr * v;
    });
    return sino;
}

Tensor back_project(const Tensor& sinogram, int n) {
    if (sinogram.rank() != 2 || sinogram.dim(1) != detector_bins(n))
        throw std::invalid_argument("back_project: sinogram shape does not match image size");
    const int n_angles = static_cast<int>(sinogram.dim(0)), bins = detector_bins(n);
    Tensor img({n, n});
    for_each_pixel_bin(n, n_angles, bins, [&](int a, int pix, int b, double fr) {
        double s = (1.0 - fr) * sinogram[static_cast<std::int64_t>(a) * bins + b];
        if (fr > 0.0) s += fr * sinogram[static_cast<std::int64_t>(a) * bins + b + 1];
        img[pix] += s;
    });
    return img;
}

Tensor mlem(const Tensor& sinogram, int n, int iters, const std::function<void(int, const Tensor&)>& on_iteration) {
    if (iters < 1) throw std::invalid_argument("mlem: iterations must be >= 1");
    const Tensor sens = back_project(Tensor::full_like(sinogram, 1.0), n);
    Tensor x({n, n}, 1.0);
    for (int it = 0; it < iters; ++it) {
        Tensor proj = forward_project(x, static_cast<int>(sinogram.dim(0)));
        for (std::int64_t i = 0; i < proj.size(); ++i) proj[i] = proj[i] > 0.0 ? sinogram[i] / proj[i] : 0.0;
        const Tensor corr = back_project(proj, n);
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] = sens[i] > 0.0 ? x[i] * corr[i] / sens[i] : 0.0;
        if (on_iteration) on_iteration(it + 1, x);
    }
    return x;
}

LowDoseResult simulate_low_dose(const Tensor& sd_slice, const LowDoseOptions& options, std::uint64_t seed) {
    if (!(options.drf >= 1.0)) throw std::invalid_argument("simulate_low_dose: drf must be >= 1");
    if (!(options.total_counts > 0.0)) throw std::invalid_argument("simulate_low_dose: total_counts must be positive");
    if (sd_slice.rank() != 2 || sd_slice.dim(0) != sd_slice.dim(1))
        throw std::invalid_argument("simulate_low_dose: slice must be square");
    for (double v : sd_slice.vec())
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("simulate_low_dose: slice values must lie in [0, 1]");
    const int n = static_cast<int>(sd_slice.dim(0));
    const int n_angles = options.n_angles > 0 ? options.n_angles : (3 * n) / 2;
    LowDoseResult r;
    r.image = Tensor(sd_slice.shape());
    Tensor ybar = forward_project(sd_slice, n_angles);
    const double mass = ybar.sum();
    if (mass <= 0.0) {
        r.zero_activity = true;
        return r;
    }
    r.expected_counts = options.total_counts / options.drf;
    const double k = r.expected_counts / mass;
    std::mt19937_64 rng(seed);
    Tensor counts(ybar.shape());
    for (std::int64_t i = 0; i < ybar.size(); ++i) {
        const double mean = ybar[i] * k;
        if (mean > 0.0) counts[i] = static_cast<double>(std::poisson_distribution<std::int64_t>(mean)(rng));
        r.measured_counts += counts[i];
    }
    r.image = mlem(counts, n, options.mlem_iters);
    if (options.post_filter_sigma > 0.0) {
        Tensor vol = r.image.reshaped({1, n, n});
        gaussian_blur_axis(vol, 1, options.post_filter_sigma);
        gaussian_blur_axis(vol, 2, options.post_filter_sigma);
        r.image = vol.reshaped({n, n});
    }
    const double mx = r.image.max();
    if (mx > 0.0)
        for (auto& v : r.image.vec()) v /= mx;
    else
        r.zero_activity = true;
    return r;
}

double drf_for_target_psnr(const Tensor& sd_slice, double target_psnr, const LowDoseOptions& base, std::uint64_t seed,
                           double max_drf, int bisection_steps) {
    const double ref_max = sd_slice.max();
    if (ref_max <= 0.0) throw std::invalid_argument("drf_for_target_psnr: zero-activity slice");
    Tensor ref = sd_slice;
    for (auto& v : ref.vec()) v /= ref_max;
    auto psnr_at = [&](double drf) {
        LowDoseOptions o = base;
        o.drf = drf;
        const double m = mse(simulate_low_dose(sd_slice, o, seed).image, ref);
        return m > 0.0 ? -10.0 * std::log10(m) : 100.0;
    };
    double lo = 0.0, hi = std::log(max_drf);
    if (psnr_at(1.0) <= target_psnr) return 1.0;
    if (psnr_at(max_drf) >= target_psnr) return max_drf;
    for (int i = 0; i < bisection_steps; ++i) {
        const double mid = 0.5 * (lo + hi);
        (psnr_at(std::exp(mid)) > target_psnr ? lo : hi) = mid;
    }
    return std::exp(hi);
}

Tensor simulate_low_dose_volume(const Tensor& sd_volume, const LowDoseOptions& options, std::uint64_t seed) {
    if (sd_volume.rank() != 3) throw std::invalid_argument("simulate_low_dose_volume: expected (D, H, W)");
    const std::int64_t D = sd_volume.dim(0), P = sd_volume.dim(1) * sd_volume.dim(2);
    Tensor out(sd_volume.shape());
    std::mt19937_64 seeder(seed);
    for (std::int64_t d = 0; d < D; ++d) {
        const std::uint64_t s = seeder();
        const Tensor slice = take_slice(sd_volume, Orientation::axial, d);
        const LowDoseResult r = simulate_low_dose(slice, options, s);
        std::copy(r.image.data(), r.image.data() + P, out.data() + d * P);
    }
    return out;
}

Tensor take_slice(const Tensor& volume, Orientation o, std::int64_t index) {
    if (volume.rank() != 3) throw std::invalid_argument("take_slice: expected (D, H, W)");
    const std::int64_t D = volume.dim(0), H = volume.dim(1), W = volume.dim(2);
    const int axis = orientation_axis(o);
    if (index < 0 || index >= volume.dim(static_cast<std::size_t>(axis)))
        throw std::out_of_range("take_slice: index " + std::to_string(index) + " out of range");
    switch (o) {
        case Orientation::axial: {
            Tensor s({H, W});
            std::copy(volume.data() + index * H * W, volume.data() + (index + 1) * H * W, s.data());
            return s;
        }
        case Orientation::coronal: {
            Tensor s({D, W});
            for (std::int64_t d = 0; d < D; ++d)
                std::copy(volume.data() + (d * H + index) * W, volume.data() + (d * H + index + 1) * W, s.data() + d * W);
            return s;
        }
        case Orientation::sagittal: {
            Tensor s({D, H});
            for (std::int64_t d = 0; d < D; ++d)
                for (std::int64_t h = 0; h < H; ++h) s[d * H + h] = volume[(d * H + h) * W + index];
            return s;
        }
    }
    return {};
}

bool is_constant(const Tensor& image) { return image.empty() || image.min() == image.max(); }

Tensor normalize_minmax(const Tensor& image) {
    Tensor out(image.shape());
    if (is_constant(image)) return out;
    const double lo = image.min(), range = image.max() - lo;
    for (std::int64_t i = 0; i < image.size(); ++i) out[i] = (image[i] - lo) / range;
    // Exact endpoints regardless of rounding in the division.
    for (std::int64_t i = 0; i < image.size(); ++i) {
        if (image[i] == lo) out[i] = 0.0;
        if (image[i] == lo + range) out[i] = 1.0;
        out[i] = std::clamp(out[i], 0.0, 1.0);
    }
    return out;
}

std::vector<SliceSample> extract_slices(const PhantomVolume& vol, const Tensor& ld_vol, Orientation o,
                                        const std::string& subject_id, std::vector<int>* dropped) {
    if (!same_shape(vol.sd_pet, ld_vol) || !same_shape(vol.sd_pet, vol.mri))
        throw std::invalid_argument("extract_slices: volume shapes differ (" + shape_str(vol.sd_pet.shape()) + ", " +
                                    shape_str(ld_vol.shape()) + ", " + shape_str(vol.mri.shape()) + ")");
    const std::int64_t n = vol.sd_pet.dim(static_cast<std::size_t>(orientation_axis(o)));
    std::vector<SliceSample> out;
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor y = take_slice(vol.sd_pet, o, i);
        if (is_constant(y)) {
            if (dropped) dropped->push_back(static_cast<int>(i));
            continue;
        }
        SliceSample s;
        s.y0_sd = normalize_minmax(y);
        s.x_ld = normalize_minmax(take_slice(ld_vol, o, i));
        s.z_mri = normalize_minmax(take_slice(vol.mri, o, i));
        s.orientation = o;
        s.subject_id = subject_id;
        s.slice_index = static_cast<int>(i);
        out.push_back(std::move(s));
    }
    return out;
}

void write_raw(const std::filesystem::path& path, const Tensor& t) {
    static_assert(std::endian::native == std::endian::little, "raw arrays are little-endian");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << kRawMagic << "\ndtype float64\nshape";
    for (auto d : t.shape()) f << ' ' << d;
    f << "\nend\n";
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw DataError("short write to " + path.string());
}

Tensor read_raw(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(f, line);
    if (line != kRawMagic) throw DataError(path.string() + ": not a petdiff raw array");
    std::getline(f, line);
    if (line != "dtype float64") throw DataError(path.string() + ": unsupported dtype line '" + line + "'");
    std::getline(f, line);
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word != "shape") throw DataError(path.string() + ": missing shape");
    Shape shape;
    std::int64_t d;
    while (ss >> d) {
        if (d < 0) throw DataError(path.string() + ": negative dimension");
        shape.push_back(d);
    }
    std::getline(f, line);
    if (line != "end") throw DataError(path.string() + ": malformed header");
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(t.size() * sizeof(double)))
        throw DataError(path.string() + ": truncated data");
    if (f.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes");
    return t;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["subject"] = r.subject_id;
        j["orientation"] = std::string(to_string(r.orientation));
        j["index"] = r.slice_index;
        j["mri_active"] = r.mri_active;
        j["seed"] = r.seed;
        j["x_ld"] = r.x_ld_path;
        j["z_mri"] = r.z_mri_path;
        j["y0_sd"] = r.y0_sd_path;
        f << j.dump() << '\n';
    }
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest " + path.string());
    std::vector<ManifestRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestRecord r;
            r.subject_id = j.at("subject").get<std::string>();
            r.orientation = parse_orientation(j.at("orientation").get<std::string>());
            r.slice_index = j.at("index").get<int>();
            r.mri_active = j.at("mri_active").get<bool>();
            r.seed = j.at("seed").get<std::uint64_t>();
            r.x_ld_path = j.at("x_ld").get<std::string>();
            r.z_mri_path = j.at("z_mri").get<std::string>();
            r.y0_sd_path = j.at("y0_sd").get<std::string>();
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<SliceSample>& samples, std::uint64_t seed) {
    std::vector<ManifestRecord> records;
    for (const auto& s : samples) {
        const std::string stem = "slices/" + s.subject_id + "_" + std::string(to_string(s.orientation)) + "_" +
                                 std::to_string(s.slice_index);
        ManifestRecord r{s.subject_id, s.orientation, s.slice_index, s.mri_active, seed,
                         stem + "_x.raw", stem + "_z.raw", stem + "_y.raw"};
        write_raw(dir / r.x_ld_path, s.x_ld);
        write_raw(dir / r.z_mri_path, s.z_mri);
        write_raw(dir / r.y0_sd_path, s.y0_sd);
        records.push_back(std::move(r));
    }
    write_manifest(dir / "manifest.jsonl", records);
}

std::vector<SliceSample> load_dataset(const std::filesystem::path& dir, bool load_mri) {
    std::vector<SliceSample> out;
    for (const auto& r : read_manifest(dir / "manifest.jsonl")) {
        SliceSample s;
        s.subject_id = r.subject_id;
        s.orientation = r.orientation;
        s.slice_index = r.slice_index;
        s.mri_active = r.mri_active && load_mri;
        s.x_ld = read_raw(dir / r.x_ld_path);
        s.y0_sd = read_raw(dir / r.y0_sd_path);
        if (load_mri) s.z_mri = read_raw(dir / r.z_mri_path);
        if (!same_shape(s.x_ld, s.y0_sd) || (load_mri && !same_shape(s.x_ld, s.z_mri)))
            throw DataError("dataset slice shapes differ for " + r.x_ld_path);
        out.push_back(std::move(s));
    }
    return out;
}

std::uint64_t subject_seed(std::uint64_t base, int index) {
    // splitmix64 finaliser over (base, index)
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Subject make_subject(const DatasetSpec& spec, int index) {
    Subject s;
    char id[32];
    std::snprintf(id, sizeof id, "sub%03d", index);
    s.id = id;
    s.seed = subject_seed(spec.seed, index);
    s.phantom = generate_phantom(s.seed, {spec.size, spec.size, spec.size});
    LowDoseOptions dose = spec.dose;
    if (spec.target_psnr > 0.0) {
        const Tensor mid = take_slice(s.phantom.sd_pet, Orientation::axial, spec.size / 2);
        dose.drf = drf_for_target_psnr(mid, spec.target_psnr, dose, s.seed ^ 0x2545f491ULL);
    }
    s.drf = dose.drf;
    s.ld_volume = simulate_low_dose_volume(s.phantom.sd_pet, dose, s.seed ^ 0x5bd1e995ULL);
    return s;
}

std::vector<SliceSample> build_dataset(const DatasetSpec& spec, std::vector<Subject>* subjects) {
    if (spec.subjects < 1) throw std::invalid_argument("build_dataset: need at least one subject");
    std::vector<SliceSample> out;
    for (int i = spec.first_subject; i < spec.first_subject + spec.subjects; ++i) {
        Subject s = make_subject(spec, i);
        for (Orientation o : spec.orientations) {
            for (auto& sample : extract_slices(s.phantom, s.ld_volume, o, s.id)) {
                const Tensor lab = take_slice(s.phantom.labels, o, sample.slice_index);
                std::int64_t brain = 0;
                for (double v : lab.vec()) brain += v != static_cast<double>(Tissue::background);
                if (static_cast<double>(brain) < spec.min_foreground * static_cast<double>(lab.size())) continue;
                out.push_back(std::move(sample));
            }
        }
        if (subjects) subjects->push_back(std::move(s));
    }
    return out;
}

}  // namespace petdiff::data
