// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "petdiff/data.hpp"
#include "petdiff/tensor.hpp"

namespace petdiff::fusion {

using data::Orientation;

/// A volume in canonical (D, H, W) order together with the orientation its
/// slices were predicted in.
struct OrientedVolume {
    Tensor data;
    Orientation orientation = Orientation::axial;
    std::string subject_id;
};

/// Stacks 2D slices along the orientation's axis: axial (H, W) slices along D,
/// coronal (D, W) along H, sagittal (D, H) along W.
OrientedVolume stack_orientation(const std::vector<Tensor>& slices, Orientation o, std::string subject_id = {});

/// Inverse of stack_orientation.
std::vector<Tensor> unstack_orientation(const OrientedVolume& vol);

/// Decomposition depth used by fuse_volumes: floor(log2(min dim)) - 1, at least 0.
int haar_depth(const Shape& shape);

/// Multi-level orthonormal 3D Haar transform; every dimension must be
/// divisible by 2^levels.
Tensor haar_forward(const Tensor& vol, int levels);
Tensor haar_inverse(const Tensor& coeffs, int levels);

/// Mirror-pads each axis up to a multiple of `multiple`.
Tensor symmetric_pad(const Tensor& vol, std::int64_t multiple);
Tensor crop(const Tensor& vol, const Shape& shape);

/// Haar-domain average of one or three canonical volumes, clipped to [0, 1].
Tensor fuse_volumes(const std::vector<OrientedVolume>& vols);

}  // namespace petdiff::fusion
