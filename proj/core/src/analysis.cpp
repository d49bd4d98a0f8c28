// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "petdiff/errors.hpp"

namespace petdiff::analysis {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd centered_gram(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("linear_cka: expected (n_samples, n_features)");
    if (x.dim(0) < 2) throw std::invalid_argument("linear_cka: need at least two samples");
    if (x.any_nan()) throw std::invalid_argument("linear_cka: NaN in activations");
    Eigen::Map<const RowMat> m(x.data(), x.dim(0), x.dim(1));
    const RowMat c = m.rowwise() - m.colwise().mean();
    return c * c.transpose();
}

}  // namespace

std::vector<std::string> encoder_layer_ids(const nn::ModelConfig& c) {
    std::vector<std::string> ids;
    for (int l = 1; l <= c.levels(); ++l) ids.push_back("enc." + std::to_string(l));
    ids.emplace_back("enc.bottleneck");
    return ids;
}

std::vector<std::string> decoder_layer_ids(const nn::ModelConfig& c) {
    std::vector<std::string> ids;
    for (int l = c.levels(); l >= 1; --l) ids.push_back("dec." + std::to_string(l));
    ids.emplace_back("dec.out");
    return ids;
}

std::vector<ActivationMatrix> capture_activations(const nn::M2DiffModel& model,
                                                  const std::vector<data::SliceSample>& batch,
                                                  const std::vector<std::string>& layer_spec,
                                                  const diffusion::NoiseSchedule& schedule,
                                                  const CaptureOptions& options) {
    const auto& c = model.config();
    if (batch.empty()) throw std::invalid_argument("capture_activations: empty batch");
    const auto enc = encoder_layer_ids(c), dec = decoder_layer_ids(c);
    for (const auto& id : layer_spec) {
        const bool is_enc = std::find(enc.begin(), enc.end(), id) != enc.end();
        const bool is_dec = std::find(dec.begin(), dec.end(), id) != dec.end();
        if (!is_enc && !is_dec) throw std::invalid_argument("capture_activations: unknown layer id '" + id + "'");
        if (!c.task2_enabled) throw std::invalid_argument("capture_activations: model has no MRI branch");
        if (is_dec && !c.dual_decoders())
            throw std::invalid_argument("capture_activations: model has no MRI decoder for layer '" + id + "'");
    }
    for (std::size_t i = 0; i < batch.size(); ++i)
        if (!batch[i].mri_active)
            throw std::invalid_argument("capture_activations: sample " + std::to_string(i) +
                                        " has no MRI, so the MRI branch has no activations");
    const int t = options.timestep > 0 ? options.timestep : std::max(1, schedule.T / 2);
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    std::vector<std::vector<Tensor>> rows(layer_spec.size() * 2);
    ag::NoGradGuard ng;
    for (std::size_t start = 0; start < batch.size(); start += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t end = std::min(batch.size(), start + static_cast<std::size_t>(options.batch_size));
        std::vector<Tensor> yt, x, z;
        for (std::size_t i = start; i < end; ++i) {
            Tensor e(batch[i].y0_sd.shape());
            for (auto& v : e.vec()) v = normal(rng);
            yt.push_back(diffusion::q_sample(batch[i].y0_sd, t, e, schedule));
            x.push_back(batch[i].x_ld);
            z.push_back(batch[i].z_mri);
        }
        nn::ActivationCapture cap;
        nn::ForwardOptions opt;
        opt.capture = &cap;
        const std::vector<int> tt(end - start, schedule.model_timestep(t));
        model.forward(ag::Var(nn::stack_images(yt)), ag::Var(nn::stack_images(x)), ag::Var(nn::stack_images(z)), tt,
                      true, opt);
        for (std::size_t k = 0; k < layer_spec.size(); ++k)
            for (int b = 0; b < 2; ++b) {
                const std::string key = std::string(b == 0 ? "pet/" : "mri/") + layer_spec[k];
                auto it = cap.find(key);
                if (it == cap.end()) throw std::logic_error("capture_activations: layer " + key + " was not recorded");
                const Tensor& a = it->second;
                const std::int64_t per = a.size() / a.dim(0);
                for (std::int64_t n = 0; n < a.dim(0); ++n) {
                    Tensor row({per});
                    std::copy(a.data() + n * per, a.data() + (n + 1) * per, row.data());
                    rows[k * 2 + static_cast<std::size_t>(b)].push_back(std::move(row));
                }
            }
    }
    std::vector<ActivationMatrix> out;
    for (int b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < layer_spec.size(); ++k) {
            const auto& r = rows[k * 2 + static_cast<std::size_t>(b)];
            const std::int64_t n = static_cast<std::int64_t>(r.size()), f = r.front().size();
            ActivationMatrix m;
            m.data = Tensor({n, f});
            for (std::int64_t i = 0; i < n; ++i) std::copy(r[static_cast<std::size_t>(i)].data(), r[static_cast<std::size_t>(i)].data() + f, m.data.data() + i * f);
            m.layer_id = layer_spec[k];
            m.branch = b == 0 ? nn::Branch::pet : nn::Branch::mri;
            m.stage = layer_spec[k].rfind("enc", 0) == 0 ? Stage::encoder : Stage::decoder;
            out.push_back(std::move(m));
        }
    return out;
}

double linear_cka(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw std::invalid_argument("linear_cka: sample counts differ (" + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()) + ")");
    const Eigen::MatrixXd K = centered_gram(a), L = centered_gram(b);
    const double kk = K.norm(), ll = L.norm();
    if (!(kk > 0.0) || !(ll > 0.0)) throw std::domain_error("linear_cka: zero-variance activations");
    const double v = K.cwiseProduct(L).sum() / (kk * ll);
    return std::clamp(v, 0.0, 1.0);
}

double linear_cka(const ActivationMatrix& a, const ActivationMatrix& b) { return linear_cka(a.data, b.data); }

CkaMatrix cka_matrix(const std::vector<ActivationMatrix>& acts_pet, const std::vector<ActivationMatrix>& acts_mri) {
    if (acts_pet.empty() || acts_mri.empty()) throw std::invalid_argument("cka_matrix: empty layer list");
    CkaMatrix m;
    for (const auto& a : acts_pet) m.rows.push_back(a.layer_id);
    for (const auto& b : acts_mri) m.cols.push_back(b.layer_id);
    m.values = Tensor({static_cast<std::int64_t>(acts_pet.size()), static_cast<std::int64_t>(acts_mri.size())});
    for (std::size_t i = 0; i < acts_pet.size(); ++i)
        for (std::size_t j = 0; j < acts_mri.size(); ++j)
            m.values[static_cast<std::int64_t>(i * acts_mri.size() + j)] = linear_cka(acts_pet[i], acts_mri[j]);
    return m;
}

void CkaMatrix::write_tsv(const std::filesystem::path& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "pet\\mri";
    for (const auto& c : cols) f << '\t' << c;
    f << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        f << rows[i];
        for (std::size_t j = 0; j < cols.size(); ++j) f << fmt::format("\t{:.6f}", at(i, j));
        f << '\n';
    }
}

}  // namespace petdiff::analysis
