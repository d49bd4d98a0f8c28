// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "petdiff/data.hpp"
#include "petdiff/diffusion.hpp"
#include "petdiff/network.hpp"

namespace petdiff::analysis {

enum class Stage { encoder, decoder };

/// Rows are samples, columns flattened channel x spatial features.
struct ActivationMatrix {
    Tensor data;  // (n_samples, n_features)
    std::string layer_id;
    nn::Branch branch = nn::Branch::pet;
    Stage stage = Stage::encoder;
};

/// Layer ids of a model: enc.1 .. enc.L, enc.bottleneck, then dec.L .. dec.1,
/// dec.out in decoder execution order.
std::vector<std::string> encoder_layer_ids(const nn::ModelConfig& c);
std::vector<std::string> decoder_layer_ids(const nn::ModelConfig& c);

struct CaptureOptions {
    int timestep = 0;  // model timestep the noisy input is formed at; 0: T / 2
    std::uint64_t seed = 0;
    int batch_size = 8;
};

/// Runs the full model on each sample (eval mode) and returns one matrix per
/// requested layer per branch, PET first, in layer_spec order.
std::vector<ActivationMatrix> capture_activations(const nn::M2DiffModel& model,
                                                  const std::vector<data::SliceSample>& batch,
                                                  const std::vector<std::string>& layer_spec,
                                                  const diffusion::NoiseSchedule& schedule,
                                                  const CaptureOptions& options = {});

/// Linear CKA with column centring, evaluated through the sample Gram
/// matrices. Throws for mismatched sample counts, n < 2, NaN or constant input.
double linear_cka(const Tensor& a, const Tensor& b);
double linear_cka(const ActivationMatrix& a, const ActivationMatrix& b);

struct CkaMatrix {
    std::vector<std::string> rows;  // PET layers
    std::vector<std::string> cols;  // MRI layers
    Tensor values;                  // (rows, cols)
    double at(std::size_t i, std::size_t j) const { return values[static_cast<std::int64_t>(i * cols.size() + j)]; }
    void write_tsv(const std::filesystem::path& path) const;
};

CkaMatrix cka_matrix(const std::vector<ActivationMatrix>& acts_pet, const std::vector<ActivationMatrix>& acts_mri);

}  // namespace petdiff::analysis
