// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "petdiff/tensor.hpp"

namespace petdiff::data {

/// Volume axes are (D, H, W). Axial slices index D, coronal H, sagittal W.
enum class Orientation { axial, coronal, sagittal };

Orientation parse_orientation(std::string_view name);
std::string_view to_string(Orientation o);
int orientation_axis(Orientation o);

/// Tissue labels written by the phantom generator.
enum class Tissue : int { background = 0, skull, grey, white, deep_grey, ventricle, lesion };

struct PhantomOptions {
    // -1: derive the lesion count from the seed (0, 1 or 2).
    int lesions = -1;
    // Gaussian blur (voxels) applied to PET before masking, mimicking scanner resolution.
    double pet_blur_sigma = 0.6;
};

struct PhantomVolume {
    Tensor sd_pet;  // (D, H, W) in [0, 1]
    Tensor mri;     // (D, H, W) in [0, 1], T1-like contrast
    Tensor labels;  // (D, H, W) Tissue codes
    Shape shape;
    std::uint64_t seed = 0;
    int lesion_count = 0;
};

/// Ellipsoid brain phantom with a folded cortical ribbon, white matter, deep
/// grey nuclei, ventricles and optional hypometabolic cortical lesions.
PhantomVolume generate_phantom(std::uint64_t seed, const Shape& shape, const PhantomOptions& options = {});

/// Number of detector bins used for an n x n slice (odd, covers the diagonal).
int detector_bins(int n);

/// Pixel-driven Radon transform with linear interpolation onto detector bins.
/// Returns (n_angles, detector_bins(n)); angles uniform on [0, pi).
Tensor forward_project(const Tensor& slice, int n_angles);

/// Exact adjoint of forward_project.
Tensor back_project(const Tensor& sinogram, int n);

struct LowDoseOptions {
    double drf = 100.0;
    double total_counts = 5e5;  // expected sinogram counts at standard dose
    int mlem_iters = 20;
    int n_angles = 0;  // 0: 3n/2
    double post_filter_sigma = 1.0;  // Gaussian post-filter in pixels; 0 disables
};

struct LowDoseResult {
    Tensor image;  // post-filtered MLEM reconstruction divided by its maximum
    double expected_counts = 0.0;
    double measured_counts = 0.0;
    bool zero_activity = false;
};

/// Poisson-thinned acquisition of a slice at total_counts / drf followed by
/// MLEM and an optional Gaussian post-filter.
LowDoseResult simulate_low_dose(const Tensor& sd_slice, const LowDoseOptions& options, std::uint64_t seed);

/// MLEM from a ones image; `on_iteration` (if set) sees every iterate.
Tensor mlem(const Tensor& sinogram, int n, int iters, const std::function<void(int, const Tensor&)>& on_iteration = {});

/// Smallest dose reduction factor on a log grid in [1, max_drf] whose
/// reconstruction PSNR against sd_slice drops to target_psnr (bisection).
double drf_for_target_psnr(const Tensor& sd_slice, double target_psnr, const LowDoseOptions& base, std::uint64_t seed,
                           double max_drf = 1000.0, int bisection_steps = 12);

/// Low-dose volume built slice by slice along the axial axis.
Tensor simulate_low_dose_volume(const Tensor& sd_volume, const LowDoseOptions& options, std::uint64_t seed);

struct SliceSample {
    Tensor x_ld;   // (H, W)
    Tensor z_mri;  // (H, W)
    Tensor y0_sd;  // (H, W)
    Orientation orientation = Orientation::axial;
    std::string subject_id;
    int slice_index = 0;
    bool mri_active = true;
};

/// Copies slice `index` along the orientation axis out of a (D, H, W) volume.
Tensor take_slice(const Tensor& volume, Orientation o, std::int64_t index);

/// Min-max normalisation; constant images become all-zero.
Tensor normalize_minmax(const Tensor& image);
bool is_constant(const Tensor& image);

/// One normalised sample per index along the orientation axis. Indices whose
/// SD slice is constant are dropped and reported through `dropped`.
std::vector<SliceSample> extract_slices(const PhantomVolume& vol, const Tensor& ld_vol, Orientation o,
                                        const std::string& subject_id, std::vector<int>* dropped = nullptr);

// Raw arrays: a short text header (magic, dtype, shape) followed by
// little-endian float64 data.
void write_raw(const std::filesystem::path& path, const Tensor& t);
Tensor read_raw(const std::filesystem::path& path);

struct ManifestRecord {
    std::string subject_id;
    Orientation orientation = Orientation::axial;
    int slice_index = 0;
    bool mri_active = true;
    std::uint64_t seed = 0;
    std::string x_ld_path;  // relative to the manifest directory
    std::string z_mri_path;
    std::string y0_sd_path;
};

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Writes slices under dir/slices and a manifest.jsonl next to them.
void save_dataset(const std::filesystem::path& dir, const std::vector<SliceSample>& samples, std::uint64_t seed);

/// Loads a dataset directory. With load_mri false the MRI files are never
/// opened and z_mri is left empty.
std::vector<SliceSample> load_dataset(const std::filesystem::path& dir, bool load_mri = true);

struct DatasetSpec {
    int subjects = 20;
    int size = 64;  // cubic phantoms
    std::vector<Orientation> orientations{Orientation::axial};
    LowDoseOptions dose;
    std::uint64_t seed = 0;
    int first_subject = 0;
    // Keep slices whose SD brain fraction is at least this (drops near-empty edge slices).
    double min_foreground = 0.15;
    // > 0: per subject, pick the DRF whose central axial slice reconstructs
    // at this PSNR (overrides dose.drf).
    double target_psnr = 0.0;
};

struct Subject {
    std::string id;
    std::uint64_t seed = 0;
    PhantomVolume phantom;
    Tensor ld_volume;
    double drf = 0.0;
};

std::uint64_t subject_seed(std::uint64_t base, int index);

Subject make_subject(const DatasetSpec& spec, int index);

/// Phantoms, low-dose volumes and slices for every subject in the spec.
std::vector<SliceSample> build_dataset(const DatasetSpec& spec, std::vector<Subject>* subjects = nullptr);

}  // namespace petdiff::data
