// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "petdiff/tensor.hpp"
#include "petdiff/training.hpp"

namespace petdiff::io {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// 16-bit binary PGM; values in [0, 1] map to round(v * 65535).
void write_pgm16(const std::filesystem::path& path, const Tensor& image);
Tensor read_pgm16(const std::filesystem::path& path);

/// RGB heatmap of a 2D matrix with values in [lo, hi], one `cell` x `cell`
/// block per entry.
void write_heatmap_ppm(const std::filesystem::path& path, const Tensor& matrix, double lo = 0.0, double hi = 1.0,
                       int cell = 24);

inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
};

/// Everything needed to resume training bit-exactly.
struct Checkpoint {
    int format_version = kCheckpointVersion;
    std::string config_hash;
    int epoch = 0;
    std::int64_t step = 0;
    std::string rng_state;
    std::vector<int> order;
    std::int64_t cursor = 0;
    std::vector<NamedTensor> params;
    std::vector<Tensor> adam_m, adam_v;
    std::vector<std::int64_t> adam_steps;
};

// Layout: "PETDIFF-CKPT\n", u64 little-endian header length, JSON header
// (sorted keys), float64 payload, then the SHA-256 of all preceding bytes.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture_state(const train::TrainState& state, const std::string& config_hash);

/// Copies weights, optimiser moments, counters and RNG into the state.
/// Throws ConfigError on a config-hash mismatch unless allow_mismatch is set.
void restore_state(train::TrainState& state, const Checkpoint& ckpt, const std::string& expected_hash,
                   bool allow_mismatch = false);

/// Loads only the weights into a model.
void load_weights(nn::M2DiffModel& model, const Checkpoint& ckpt);

}  // namespace petdiff::io
