// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petdiff/data.hpp"
#include "petdiff/network.hpp"
#include "petdiff/sampling.hpp"
#include "petdiff/training.hpp"

namespace petdiff::config {

using Json = nlohmann::json;

/// The full default tree. Every accepted key appears here.
Json default_tree();

/// Deep-merges `user` into the defaults. Unknown keys and type changes throw
/// ConfigError naming the dotted path. Objects listed as free-form
/// (metrics.predictions) accept arbitrary keys.
Json merge_strict(const Json& defaults, const Json& user);

/// Applies "a.b.c=value". The value is parsed as JSON when possible and taken
/// as a plain string otherwise. The key must already exist.
void apply_override(Json& tree, const std::string& assignment);

struct TrainSection {
    train::TrainConfig train;
    train::LossWeights weights;
    std::string resume_from;
    bool allow_hash_mismatch = false;
};

struct SamplerSection {
    sampling::SamplerConfig sampler;
    std::string checkpoint;
    std::string dataset;  // empty: data.dir
    int limit = 0;        // 0: every slice
    int batch_size = 8;
    bool allow_hash_mismatch = false;
};

struct DataSection {
    std::string dir;
    data::DatasetSpec spec;
    double target_psnr = 0.0;  // > 0: choose the DRF per subject to hit this PSNR
};

struct MetricsSection {
    std::uint64_t featurizer_seed = 0;
    std::map<std::string, std::string> predictions;  // method -> predictions.jsonl or dataset dir
    std::string reference;                           // empty: data.dir
};

struct AnalysisSection {
    std::string checkpoint;
    std::vector<std::string> layers;  // empty: every encoder and decoder layer
    int n_samples = 64;
    int timestep = 0;
    std::string dataset;  // empty: data.dir
    bool allow_hash_mismatch = false;
};

/// Resolved, validated configuration.
struct RunConfig {
    Json tree;
    std::uint64_t seed = 0;
    nn::ModelConfig model;
    TrainSection train;
    SamplerSection sampler;
    DataSection data;
    MetricsSection metrics;
    AnalysisSection analysis;

    /// SHA-256 of the canonical (sorted-key) dump of the whole tree.
    std::string config_hash() const;
    /// Hash of the sections that fix the weight layout and the noise
    /// schedule (model, task2, hff, decoders, train.T, train.schedule).
    /// Checkpoints carry this value.
    std::string model_hash() const;
    std::string canonical_dump() const;
};

/// Typed view of a merged tree; validates every section.
RunConfig from_tree(const Json& tree);

/// Loads a JSON file (or the defaults when path is empty), applies the
/// overrides in order, and resolves.
RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace petdiff::config
