// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "petdiff/errors.hpp"

namespace petdiff::train {

namespace {

bool uses_mri(const nn::ModelConfig& c) { return c.task2_enabled || c.single_task_uses_mri; }

Tensor item(const Tensor& batch, std::int64_t n) {
    const std::int64_t P = batch.dim(2) * batch.dim(3);
    Tensor out({1, 1, batch.dim(2), batch.dim(3)});
    std::copy(batch.data() + n * P, batch.data() + (n + 1) * P, out.data());
    return out;
}

struct Group {
    std::vector<std::size_t> idx;
    Tensor y0, y_t, x, z;
    std::vector<int> t;
};

Group make_group(const std::vector<SliceSample>& batch, std::vector<std::size_t> idx, const std::vector<int>& t,
                 const std::vector<Tensor>& eps, const diffusion::NoiseSchedule& schedule, bool with_mri) {
    Group g;
    g.idx = std::move(idx);
    std::vector<Tensor> y0, yt, x, z;
    for (std::size_t i : g.idx) {
        const auto& s = batch[i];
        y0.push_back(s.y0_sd);
        yt.push_back(diffusion::q_sample(s.y0_sd, t[i], eps[i], schedule));
        x.push_back(s.x_ld);
        if (with_mri) z.push_back(s.z_mri);
        g.t.push_back(schedule.model_timestep(t[i]));
    }
    g.y0 = nn::stack_images(y0);
    g.y_t = nn::stack_images(yt);
    g.x = nn::stack_images(x);
    if (with_mri) g.z = nn::stack_images(z);
    return g;
}

void check_finite_items(const Group& g, const nn::PredictionPair& p) {
    const std::int64_t P = g.y0.dim(2) * g.y0.dim(3);
    for (std::size_t k = 0; k < g.idx.size(); ++k) {
        for (const Var* v : {&p.y0_hat_pet, &p.v_pet, &p.y0_hat_mri, &p.v_mri}) {
            if (!v->defined()) continue;
            const double* d = v->value().data() + static_cast<std::int64_t>(k) * P;
            for (std::int64_t i = 0; i < P; ++i)
                if (!std::isfinite(d[i]))
                    throw NumericalError(fmt::format("non-finite network output for batch sample {}", g.idx[k]),
                                         static_cast<std::int64_t>(g.idx[k]));
        }
    }
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(vlb_weight >= 0.0))
        throw std::invalid_argument("loss weights must be nonnegative");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train.epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train.learning_rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
    if (T < 1) throw std::invalid_argument("train.T must be >= 1");
    if (!(mri_availability >= 0.0 && mri_availability <= 1.0))
        throw std::invalid_argument("train.mri_availability must lie in [0, 1]");
    if (max_steps < 0) throw std::invalid_argument("train.max_steps must be >= 0");
    if (log_every < 1) throw std::invalid_argument("train.log_every must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("train.checkpoint_every must be >= 0");
}

double recon_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "recon_loss");
    if (pred.empty()) throw std::invalid_argument("recon_loss: empty input");
    double s = 0.0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

double bias_loss(const Tensor& pred_pet, const Tensor& pred_mri, bool mri_active) {
    if (!mri_active) throw std::logic_error("bias_loss: undefined without the MRI branch");
    return recon_loss(pred_pet, pred_mri);
}

double total_loss(double l_pet, double l_mri, double l_bias, double l_vlb, const LossWeights& w) {
    for (double v : {l_pet, l_mri, l_bias, l_vlb})
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("total_loss: components must be finite and >= 0");
    w.validate();
    return w.lambda1 * l_pet + w.lambda1 * l_mri + w.lambda2 * l_bias + w.vlb_weight * l_vlb;
}

std::vector<SliceSample> mask_mri(std::vector<SliceSample> batch, double availability, std::mt19937_64& rng) {
    if (!(availability >= 0.0 && availability <= 1.0)) throw std::invalid_argument("mask_mri: availability outside [0, 1]");
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (auto& s : batch) {
        const bool keep = U(rng) < availability;
        s.mri_active = s.mri_active && keep;
        if (!s.mri_active) {
            const Shape shape = s.z_mri.empty() ? s.x_ld.shape() : s.z_mri.shape();
            s.z_mri = Tensor(shape, std::numeric_limits<double>::quiet_NaN());
        }
    }
    return batch;
}

Var vlb_loss(const Tensor& y0, const Tensor& y_t, const Var& y0_hat, const Var& v, const std::vector<int>& t,
             const diffusion::NoiseSchedule& schedule) {
    require_same_shape(y0, y_t, "vlb_loss");
    require_same_shape(y0, v.value(), "vlb_loss");
    require_same_shape(y0, y0_hat.value(), "vlb_loss");
    const std::int64_t N = y0.dim(0);
    if (static_cast<std::int64_t>(t.size()) != N) throw std::invalid_argument("vlb_loss: one timestep per item required");
    const std::int64_t P = y0.size() / N;
    auto grad = std::make_shared<Tensor>(v.shape());
    double total = 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
        const auto r = diffusion::vlb_variance_term_with_grad(item(y0, n), item(y_t, n), item(y0_hat.value(), n),
                                                              item(v.value(), n), t[static_cast<std::size_t>(n)], schedule);
        total += r.value / static_cast<double>(N);
        for (std::int64_t i = 0; i < P; ++i) (*grad)[n * P + i] = r.grad_v[i] / static_cast<double>(N);
    }
    return ag::make_result(Tensor(Shape{}, total), {v}, [v, grad](ag::Node& self) {
        Tensor& g = v.node()->grad_buffer();
        const double s = self.grad[0];
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += s * (*grad)[i];
    });
}

void Adam::step(const std::vector<nn::NamedParameter>& params) {
    if (m.empty()) {
        for (const auto& p : params) {
            m.emplace_back(p.var.shape());
            v.emplace_back(p.var.shape());
        }
        steps.assign(params.size(), 0);
    }
    if (m.size() != params.size()) throw std::logic_error("Adam: parameter list changed between steps");
    for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& g = params[k].var.grad();
        if (g.empty()) continue;
        Var p = params[k].var;
        Tensor& w = p.mutable_value();
        Tensor& mk = m[k];
        Tensor& vk = v[k];
        const std::int64_t s = ++steps[k];
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s));
        for (std::int64_t i = 0; i < w.size(); ++i) {
            mk[i] = cfg_.beta1 * mk[i] + (1.0 - cfg_.beta1) * g[i];
            vk[i] = cfg_.beta2 * vk[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            w[i] -= cfg_.lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + cfg_.eps);
        }
    }
}

LossGraph compute_loss(const nn::M2DiffModel& model, const std::vector<SliceSample>& batch, const std::vector<int>& t,
                       const std::vector<Tensor>& eps, const diffusion::NoiseSchedule& schedule, const LossWeights& w,
                       const nn::ForwardOptions& opt) {
    if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
    if (t.size() != batch.size() || eps.size() != batch.size())
        throw std::invalid_argument("compute_loss: t and eps need one entry per sample");
    w.validate();
    const auto& mc = model.config();
    const bool mri_model = uses_mri(mc);

    std::vector<std::size_t> act, inact;
    for (std::size_t i = 0; i < batch.size(); ++i) (mri_model && batch[i].mri_active ? act : inact).push_back(i);
    const double N = static_cast<double>(batch.size());

    LossGraph out;
    out.record.n_items = static_cast<int>(batch.size());
    out.record.n_active = static_cast<int>(act.size());

    std::vector<std::pair<double, Var>> pet_terms, vlb_terms;
    std::vector<std::pair<double, Var>> mri_terms, bias_terms;

    auto run = [&](const std::vector<std::size_t>& idx, bool active) {
        if (idx.empty()) return nn::PredictionPair{};
        Group g = make_group(batch, idx, t, eps, schedule, active);
        nn::PredictionPair p =
            model.forward(Var(g.y_t), Var(g.x), active ? Var(g.z) : Var(), g.t, active, opt);
        check_finite_items(g, p);
        std::vector<int> tt;
        for (std::size_t i : g.idx) tt.push_back(t[i]);
        const double frac = static_cast<double>(idx.size()) / N;
        const Var target(g.y0);
        pet_terms.emplace_back(frac, ag::mse(p.y0_hat_pet, target));
        vlb_terms.emplace_back(frac, vlb_loss(g.y0, g.y_t, p.y0_hat_pet, p.v_pet, tt, schedule));
        if (active && p.has_mri_branch()) {
            mri_terms.emplace_back(1.0, ag::mse(p.y0_hat_mri, target));
            bias_terms.emplace_back(1.0, ag::mse(p.y0_hat_pet, p.y0_hat_mri));
            vlb_terms.emplace_back(1.0, vlb_loss(g.y0, g.y_t, p.y0_hat_mri, p.v_mri, tt, schedule));
        }
        return p;
    };
    out.active = run(act, true);
    out.inactive = run(inact, false);

    auto zero = [] { return Var(Tensor(Shape{}, 0.0)); };
    out.pet = ag::weighted_sum(pet_terms);
    out.vlb = ag::weighted_sum(vlb_terms);
    out.mri = mri_terms.empty() ? zero() : ag::weighted_sum(mri_terms);
    out.bias = bias_terms.empty() ? zero() : ag::weighted_sum(bias_terms);
    out.total = ag::weighted_sum(
        {{w.lambda1, out.pet}, {w.lambda1, out.mri}, {w.lambda2, out.bias}, {w.vlb_weight, out.vlb}});

    auto& r = out.record;
    r.pet = out.pet.value()[0];
    r.mri = out.mri.value()[0];
    r.bias = out.bias.value()[0];
    r.vlb = out.vlb.value()[0];
    r.total = out.total.value()[0];
    return out;
}

TrainState::TrainState(nn::ModelConfig mc, const TrainConfig& tc)
    : model(std::move(mc), tc.seed), adam(AdamConfig{tc.learning_rate}), rng(tc.seed ^ 0x7f4a7c159e3779b9ULL) {}

LossRecord train_step(TrainState& state, const std::vector<SliceSample>& batch,
                      const diffusion::NoiseSchedule& schedule, const LossWeights& w) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    std::uniform_int_distribution<int> tdist(1, schedule.T);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<int> t;
    std::vector<Tensor> eps;
    for (const auto& s : batch) {
        t.push_back(tdist(state.rng));
        Tensor e(s.y0_sd.shape());
        for (auto& x : e.vec()) x = normal(state.rng);
        eps.push_back(std::move(e));
    }
    nn::ForwardOptions opt;
    opt.train = true;
    opt.rng = &state.rng;
    const bool mri_model = uses_mri(state.model.config());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const bool bad = !batch[i].x_ld.all_finite() || !batch[i].y0_sd.all_finite() ||
                         (mri_model && batch[i].mri_active && !batch[i].z_mri.all_finite());
        if (bad)
            throw NumericalError(fmt::format("non-finite input in batch sample {}", i), static_cast<std::int64_t>(i));
    }
    LossGraph g = compute_loss(state.model, batch, t, eps, schedule, w, opt);
    if (!std::isfinite(g.record.total))
        throw NumericalError("non-finite loss at step " + std::to_string(state.step + 1), 0);
    state.model.zero_grad();
    g.total.backward();
    state.adam.step(state.model.parameters());
    state.model.zero_grad();
    ++state.step;
    g.record.step = state.step;
    g.record.epoch = state.epoch;
    return g.record;
}

void run_training(TrainState& state, const std::vector<SliceSample>& dataset, const TrainConfig& cfg,
                  const diffusion::NoiseSchedule& schedule, const LossWeights& w, const TrainCallbacks& cb) {
    cfg.validate();
    if (dataset.empty()) throw DataError("training dataset is empty");
    const auto n = static_cast<std::int64_t>(dataset.size());
    while (state.epoch < cfg.epochs) {
        if (state.order.empty()) {
            state.order.resize(static_cast<std::size_t>(n));
            std::iota(state.order.begin(), state.order.end(), 0);
            std::shuffle(state.order.begin(), state.order.end(), state.rng);
            state.cursor = 0;
        }
        while (state.cursor < n) {
            if (cfg.max_steps > 0 && state.step >= cfg.max_steps) return;
            std::vector<SliceSample> batch;
            const std::int64_t end = std::min(n, state.cursor + cfg.batch_size);
            for (std::int64_t i = state.cursor; i < end; ++i)
                batch.push_back(dataset[static_cast<std::size_t>(state.order[static_cast<std::size_t>(i)])]);
            state.cursor = end;
            batch = mask_mri(std::move(batch), cfg.mri_availability, state.rng);
            const LossRecord r = train_step(state, batch, schedule, w);
            if (cb.on_step && (r.step % cfg.log_every == 0)) cb.on_step(r);
            if (cb.on_checkpoint && cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0) cb.on_checkpoint(state);
        }
        state.order.clear();
        state.cursor = 0;
        ++state.epoch;
    }
}

TrainingLog::TrainingLog(const std::filesystem::path& path, bool append) {
    const bool fresh = !append || !std::filesystem::exists(path);
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw DataError("cannot open training log " + path.string());
    if (fresh) out_ << "step\tepoch\tl_pet\tl_mri\tl_bias\tl_vlb\ttotal\tn_items\tn_active\twall_s\n";
}

void TrainingLog::write(const LossRecord& r, double wall_seconds) {
    out_ << fmt::format("{}\t{}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{:.17g}\t{}\t{}\t{:.3f}\n", r.step, r.epoch, r.pet,
                        r.mri, r.bias, r.vlb, r.total, r.n_items, r.n_active, wall_seconds);
    out_.flush();
}

std::vector<LogRow> read_training_log(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open training log " + path.string());
    std::string line;
    std::getline(f, line);
    std::vector<LogRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        LogRow row;
        auto& r = row.record;
        if (!(ss >> r.step >> r.epoch >> r.pet >> r.mri >> r.bias >> r.vlb >> r.total >> r.n_items >> r.n_active >>
              row.wall_seconds))
            throw DataError("malformed training log row: " + line);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace petdiff::train
