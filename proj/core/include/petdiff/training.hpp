// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <vector>

#include "petdiff/data.hpp"
#include "petdiff/diffusion.hpp"
#include "petdiff/network.hpp"

namespace petdiff::train {

using ag::Var;
using data::SliceSample;

struct LossWeights {
    double lambda1 = 0.4;
    double lambda2 = 0.2;
    double vlb_weight = 0.001;
    void validate() const;
};

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 1e-4;
    int batch_size = 4;
    int T = 1000;
    diffusion::ScheduleKind schedule = diffusion::ScheduleKind::cosine;
    double mri_availability = 1.0;
    std::uint64_t seed = 0;
    std::int64_t max_steps = 0;  // 0: run all epochs
    int log_every = 1;
    int checkpoint_every = 0;  // steps; 0: only at the end
    void validate() const;
};

/// Mean squared error over all pixels.
double recon_loss(const Tensor& pred, const Tensor& target);

/// MSE between the two branch estimates. Throws when mri_active is false.
double bias_loss(const Tensor& pred_pet, const Tensor& pred_mri, bool mri_active = true);

/// lambda1 (l_pet + l_mri) + lambda2 l_bias + vlb_weight l_vlb
double total_loss(double l_pet, double l_mri, double l_bias, double l_vlb, const LossWeights& w);

/// Draws u ~ U(0, 1) per sample and keeps MRI iff u < availability (and the
/// sample already had it). Dropped MRI slices are overwritten with NaN.
std::vector<SliceSample> mask_mri(std::vector<SliceSample> batch, double availability, std::mt19937_64& rng);

/// Mean over items of the variance term, with y0_hat held constant so that
/// only v receives gradient.
Var vlb_loss(const Tensor& y0, const Tensor& y_t, const Var& y0_hat, const Var& v, const std::vector<int>& t,
             const diffusion::NoiseSchedule& schedule);

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adaptive moment estimation. Parameters that received no gradient in a
/// step are left untouched, moments included.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
    void step(const std::vector<nn::NamedParameter>& params);

    const AdamConfig& config() const noexcept { return cfg_; }
    std::vector<Tensor> m, v;
    std::vector<std::int64_t> steps;

private:
    AdamConfig cfg_;
};

struct LossRecord {
    std::int64_t step = 0;
    int epoch = 0;
    double pet = 0.0;
    double mri = 0.0;
    double bias = 0.0;
    double vlb = 0.0;
    double total = 0.0;
    int n_items = 0;
    int n_active = 0;
};

struct LossGraph {
    Var total, pet, mri, bias, vlb;
    LossRecord record;
    nn::PredictionPair active, inactive;  // per-group predictions (may be empty)
};

/// Builds the multi-task objective for one batch with given timesteps and
/// noise. Items without MRI contribute only to L_PET and the PET variance term.
LossGraph compute_loss(const nn::M2DiffModel& model, const std::vector<SliceSample>& batch, const std::vector<int>& t,
                       const std::vector<Tensor>& eps, const diffusion::NoiseSchedule& schedule, const LossWeights& w,
                       const nn::ForwardOptions& opt = {});

struct TrainState {
    nn::M2DiffModel model;
    Adam adam;
    std::mt19937_64 rng;
    std::int64_t step = 0;
    int epoch = 0;
    std::vector<int> order;  // sample permutation of the current epoch
    std::int64_t cursor = 0;  // next position in `order`

    TrainState(nn::ModelConfig mc, const TrainConfig& tc);
};

/// One optimisation step: draws t and noise per item, evaluates the loss,
/// backpropagates and applies Adam. Throws NumericalError naming the first
/// non-finite sample.
LossRecord train_step(TrainState& state, const std::vector<SliceSample>& batch,
                      const diffusion::NoiseSchedule& schedule, const LossWeights& w);

struct TrainCallbacks {
    std::function<void(const LossRecord&)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;
};

/// Epoch loop with per-epoch shuffling and MRI masking. Resumable: the
/// permutation and cursor live in the state.
void run_training(TrainState& state, const std::vector<SliceSample>& dataset, const TrainConfig& cfg,
                  const diffusion::NoiseSchedule& schedule, const LossWeights& w, const TrainCallbacks& cb = {});

/// Tab-separated log: step, epoch, each loss component, wall time.
class TrainingLog {
public:
    explicit TrainingLog(const std::filesystem::path& path, bool append = false);
    void write(const LossRecord& r, double wall_seconds);

private:
    std::ofstream out_;
};

struct LogRow {
    LossRecord record;
    double wall_seconds = 0.0;
};
std::vector<LogRow> read_training_log(const std::filesystem::path& path);

}  // namespace petdiff::train
