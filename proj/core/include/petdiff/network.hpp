// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "petdiff/autograd.hpp"
#include "petdiff/tensor.hpp"

namespace petdiff::nn {

using ag::Var;

enum class Branch { pet, mri };
std::string_view to_string(Branch b);

/// Architecture plus the ablation switches that select between the
/// single-task, no-fusion, shared-decoder and full dual-decoder variants.
struct ModelConfig {
    int base_channels = 32;
    std::vector<int> channel_multipliers{1, 2, 4};
    std::set<int> attention_levels{2, 3};  // 1-based level indices
    int num_res_blocks = 2;
    double dropout = 0.1;
    int input_size = 64;
    std::vector<int> fused_width_per_level;  // empty: level channel counts

    bool task2_enabled = true;
    bool hff_enabled = true;
    bool shared_single_decoder = false;
    bool asymmetric_dropout = false;
    double mri_decoder_dropout = 0.3;
    // Single-task variant that concatenates the MRI slice into the PET encoder stem.
    bool single_task_uses_mri = false;

    int levels() const { return static_cast<int>(channel_multipliers.size()); }
    int level_channels(int level) const;  // 1-based
    int fused_width(int level) const;     // 1-based
    int time_embed_dim() const { return 4 * base_channels; }
    bool dual_decoders() const { return task2_enabled && !shared_single_decoder; }
    void validate() const;
};

/// Encoder output: one map per resolution level plus the bottleneck.
struct FeaturePyramid {
    std::vector<Var> levels;
    Var bottleneck;
};

struct FusionPyramid {
    std::vector<Var> levels;
};

struct PredictionPair {
    Var y0_hat_pet;
    Var v_pet;
    Var y0_hat_mri;  // undefined unless mri_active and the model has a second decoder
    Var v_mri;
    bool mri_active = false;
    bool has_mri_branch() const { return y0_hat_mri.defined(); }
};

/// Intermediate activations keyed by "<branch>/<layer id>", e.g. "pet/enc.1".
using ActivationCapture = std::map<std::string, Tensor>;

enum class ParameterGroup { encoder_pet, encoder_mri, decoder_pet, decoder_mri, fusion, time_embedding };
std::string_view to_string(ParameterGroup g);

struct NamedParameter {
    std::string name;
    Var var;
    ParameterGroup group;
};

/// sin(t w_k) for k < dim/2 followed by cos(t w_k), w_k = period^(-k / (dim/2)).
Tensor time_embed(double t, int dim, double max_period = 10000.0);

struct ForwardOptions {
    bool train = false;
    std::mt19937_64* rng = nullptr;  // required when training with dropout
    ActivationCapture* capture = nullptr;
};

// Building blocks. Each owns its parameters as leaf Vars.
struct Conv2d {
    Var weight, bias;
    int pad = 0;
    Conv2d() = default;
    Conv2d(int in, int out, int kernel, std::mt19937_64& rng, bool with_bias = true);
    Var operator()(const Var& x) const { return ag::conv2d(x, weight, bias, pad); }
};

struct Linear {
    Var weight, bias;
    Linear() = default;
    Linear(int in, int out, std::mt19937_64& rng);
    Var operator()(const Var& x) const { return ag::linear(x, weight, bias); }
};

struct GroupNorm {
    Var gamma, beta;
    int groups = 1;
    GroupNorm() = default;
    explicit GroupNorm(int channels);
    Var operator()(const Var& x) const { return ag::group_norm(x, groups, gamma, beta); }
};

struct ResBlock {
    GroupNorm norm1, norm2;
    Conv2d conv1, conv2;
    Linear emb;  // -> 2 * out (scale, shift)
    std::optional<Conv2d> skip;
    ResBlock() = default;
    ResBlock(int in, int out, int emb_dim, std::mt19937_64& rng);
    Var forward(const Var& x, const Var& emb_act, double dropout, const ForwardOptions& opt) const;
};

struct AttentionBlock {
    GroupNorm norm;
    Conv2d qkv, proj;
    int heads = 1;
    AttentionBlock() = default;
    AttentionBlock(int channels, std::mt19937_64& rng);
    Var forward(const Var& x) const;
};

struct Encoder {
    Conv2d stem;
    std::vector<std::vector<ResBlock>> blocks;  // per level
    std::vector<std::optional<AttentionBlock>> attention;
    ResBlock mid1, mid2;
    AttentionBlock mid_attn;
};

struct Decoder {
    std::vector<std::vector<ResBlock>> blocks;  // index 0 = level 1
    std::vector<std::optional<AttentionBlock>> attention;
    std::vector<std::optional<Conv2d>> upsample;  // level l > 1: ch(l) -> ch(l-1)
    GroupNorm out_norm;
    Conv2d out_conv;  // -> 2 channels (y0_hat, v)
    double dropout = 0.0;
};

struct FusionHead {
    std::vector<Conv2d> project_pet, project_mri;  // T1, T2 (1x1)
    std::vector<Conv2d> fuse_conv;                 // gamma (3x3, 2 shared -> fused)
    std::vector<GroupNorm> fuse_norm;
    std::vector<Conv2d> pet_only_conv;             // gamma' (3x3, shared -> fused)
    std::vector<GroupNorm> pet_only_norm;
};

class M2DiffModel {
public:
    M2DiffModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const noexcept { return config_; }

    /// Time-embedding MLP output for per-item timesteps, shape (N, 4 * base).
    Var embed_time(const std::vector<int>& t) const;

    /// Runs one encoder. `cond` is the conditioning slice(s) stacked on
    /// channels, (N, c, H, W); y_t is (N, 1, H, W).
    FeaturePyramid encode(Branch branch, const Var& cond, const Var& y_t, const Var& temb,
                          const ForwardOptions& opt = {}) const;

    FusionPyramid hff_fuse(const FeaturePyramid& pet, const FeaturePyramid& mri) const;

    /// PET-only replacement for the fused pyramid used when MRI is absent.
    FusionPyramid pet_only_fuse(const FeaturePyramid& pet) const;

    /// Returns (y0_hat, v), each (N, 1, H, W).
    std::pair<Var, Var> decode(Branch branch, const Var& bottleneck, const std::vector<Var>& skips, const Var& temb,
                               const ForwardOptions& opt = {}) const;

    /// Full conditional forward pass. z_mri is ignored (never read) when
    /// mri_active is false and may then be undefined or hold garbage.
    PredictionPair forward(const Var& y_t, const Var& x_ld, const Var& z_mri, const std::vector<int>& t,
                           bool mri_active, const ForwardOptions& opt = {}) const;

    std::vector<NamedParameter> parameters() const;
    std::int64_t parameter_count(ParameterGroup g) const;
    std::int64_t parameter_count() const;

    void zero_grad();

private:
    ModelConfig config_;
    Linear temb1_, temb2_;
    Encoder enc_pet_;
    std::optional<Encoder> enc_mri_;
    Decoder dec_pet_;
    std::optional<Decoder> dec_mri_;
    std::optional<FusionHead> hff_;

    const Encoder& encoder(Branch b) const;
    const Decoder& decoder(Branch b) const;
    Encoder make_encoder(int in_channels, std::mt19937_64& rng) const;
    Decoder make_decoder(int bottleneck_channels, std::mt19937_64& rng, double dropout) const;
};

/// Convenience for tests and tools: wraps a (H, W) image set into (N, 1, H, W).
Tensor stack_images(const std::vector<Tensor>& images);
Tensor unstack_image(const Tensor& batch, std::int64_t n);

}  // namespace petdiff::nn
