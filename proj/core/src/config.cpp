// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/config.hpp"

#include <fstream>

#include "petdiff/errors.hpp"
#include "petdiff/io.hpp"

namespace petdiff::config {

namespace {

bool is_free_form(const std::string& path) { return path == "metrics.predictions"; }

std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

bool same_kind(const Json& a, const Json& b) {
    if (a.is_number() && b.is_number()) {
        // An integer default must stay integral; a float default accepts either.
        return a.is_number_float() || !b.is_number_float();
    }
    return a.type() == b.type();
}

void merge_into(Json& dst, const Json& src, const std::string& path) {
    if (!src.is_object()) throw ConfigError("'" + (path.empty() ? "<root>" : path) + "' must be an object");
    for (auto it = src.begin(); it != src.end(); ++it) {
        const std::string key_path = join(path, it.key());
        if (is_free_form(path)) {
            if (!it.value().is_string()) throw ConfigError("'" + key_path + "' must be a string");
            dst[it.key()] = it.value();
            continue;
        }
        if (!dst.contains(it.key())) throw ConfigError("unknown config key '" + key_path + "'");
        Json& slot = dst[it.key()];
        if (slot.is_object()) {
            merge_into(slot, it.value(), key_path);
        } else {
            if (!same_kind(slot, it.value()))
                throw ConfigError("'" + key_path + "' expects " + std::string(slot.type_name()) + ", got " +
                                  it.value().type_name());
            if (slot.is_array() && !slot.empty())
                for (const auto& e : it.value())
                    if (!same_kind(slot.front(), e))
                        throw ConfigError("'" + key_path + "' elements must be " + slot.front().type_name());
            slot = it.value();
        }
    }
}

template <class T>
T get(const Json& tree, const char* section, const char* key) {
    try {
        return tree.at(section).at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
}

std::uint64_t get_seed(const Json& j, const std::string& path) {
    if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0))
        throw ConfigError("'" + path + "' must be a nonnegative integer");
    return j.get<std::uint64_t>();
}

template <class F>
void guarded(const char* section, F&& f) {
    try {
        f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string(section) + ": " + e.what());
    }
}

}  // namespace

Json default_tree() {
    const nn::ModelConfig m;
    const train::TrainConfig t;
    const train::LossWeights w;
    const data::DatasetSpec d;
    return Json{
        {"seed", 0},
        {"model",
         {{"base_channels", m.base_channels},
          {"channel_multipliers", m.channel_multipliers},
          {"attention_levels", std::vector<int>(m.attention_levels.begin(), m.attention_levels.end())},
          {"num_res_blocks", m.num_res_blocks},
          {"dropout", m.dropout},
          {"input_size", m.input_size},
          {"fused_width_per_level", Json::array()},
          {"single_task_uses_mri", m.single_task_uses_mri}}},
        {"task2", {{"enabled", m.task2_enabled}}},
        {"hff", {{"enabled", m.hff_enabled}}},
        {"decoders",
         {{"shared_single", m.shared_single_decoder},
          {"asymmetric_dropout", m.asymmetric_dropout},
          {"mri_decoder_dropout", m.mri_decoder_dropout}}},
        {"train",
         {{"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"batch_size", t.batch_size},
          {"T", t.T},
          {"schedule", std::string(diffusion::to_string(t.schedule))},
          {"mri_availability", t.mri_availability},
          {"max_steps", t.max_steps},
          {"log_every", t.log_every},
          {"checkpoint_every", t.checkpoint_every},
          {"lambda1", w.lambda1},
          {"lambda2", w.lambda2},
          {"vlb_weight", w.vlb_weight},
          {"resume_from", ""},
          {"allow_hash_mismatch", false}}},
        {"sampler",
         {{"steps", 0},
          {"mri_active", true},
          {"clip_x0", true},
          {"checkpoint", ""},
          {"dataset", ""},
          {"limit", 0},
          {"batch_size", 8},
          {"allow_hash_mismatch", false}}},
        {"data",
         {{"dir", "data"},
          {"subjects", d.subjects},
          {"size", d.size},
          {"orientations", Json::array({"axial"})},
          {"first_subject", d.first_subject},
          {"min_foreground", d.min_foreground},
          {"drf", d.dose.drf},
          {"total_counts", d.dose.total_counts},
          {"mlem_iters", d.dose.mlem_iters},
          {"n_angles", d.dose.n_angles},
          {"post_filter_sigma", d.dose.post_filter_sigma},
          {"target_psnr", 0.0}}},
        {"metrics", {{"featurizer_seed", 0}, {"predictions", Json::object()}, {"reference", ""}}},
        {"analysis",
         {{"checkpoint", ""},
          {"layers", Json::array()},
          {"n_samples", 64},
          {"timestep", 0},
          {"dataset", ""},
          {"allow_hash_mismatch", false}}},
    };
}

Json merge_strict(const Json& defaults, const Json& user) {
    Json out = defaults;
    merge_into(out, user, "");
    return out;
}

void apply_override(Json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value;
    try {
        value = Json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        value = text;
    }
    // Build a nested patch and merge it so the same type checks apply.
    Json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1))
        parts.push_back(rest.substr(0, pos));
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) throw ConfigError("override key '" + key + "' has an empty component");
        patch = Json{{*it, patch}};
    }
    merge_into(tree, patch, "");
}

RunConfig from_tree(const Json& tree) {
    RunConfig rc;
    rc.tree = tree;
    rc.seed = get_seed(tree.at("seed"), "seed");

    guarded("model", [&] {
        auto& m = rc.model;
        m.base_channels = get<int>(tree, "model", "base_channels");
        m.channel_multipliers = get<std::vector<int>>(tree, "model", "channel_multipliers");
        const auto att = get<std::vector<int>>(tree, "model", "attention_levels");
        m.attention_levels = std::set<int>(att.begin(), att.end());
        m.num_res_blocks = get<int>(tree, "model", "num_res_blocks");
        m.dropout = get<double>(tree, "model", "dropout");
        m.input_size = get<int>(tree, "model", "input_size");
        m.fused_width_per_level = get<std::vector<int>>(tree, "model", "fused_width_per_level");
        m.single_task_uses_mri = get<bool>(tree, "model", "single_task_uses_mri");
        m.task2_enabled = get<bool>(tree, "task2", "enabled");
        m.hff_enabled = get<bool>(tree, "hff", "enabled");
        m.shared_single_decoder = get<bool>(tree, "decoders", "shared_single");
        m.asymmetric_dropout = get<bool>(tree, "decoders", "asymmetric_dropout");
        m.mri_decoder_dropout = get<double>(tree, "decoders", "mri_decoder_dropout");
        m.validate();
    });

    guarded("train", [&] {
        auto& t = rc.train.train;
        t.epochs = get<int>(tree, "train", "epochs");
        t.learning_rate = get<double>(tree, "train", "learning_rate");
        t.batch_size = get<int>(tree, "train", "batch_size");
        t.T = get<int>(tree, "train", "T");
        t.schedule = diffusion::parse_schedule_kind(get<std::string>(tree, "train", "schedule"));
        t.mri_availability = get<double>(tree, "train", "mri_availability");
        t.seed = rc.seed;
        t.max_steps = get<std::int64_t>(tree, "train", "max_steps");
        t.log_every = get<int>(tree, "train", "log_every");
        t.checkpoint_every = get<int>(tree, "train", "checkpoint_every");
        t.validate();
        auto& w = rc.train.weights;
        w.lambda1 = get<double>(tree, "train", "lambda1");
        w.lambda2 = get<double>(tree, "train", "lambda2");
        w.vlb_weight = get<double>(tree, "train", "vlb_weight");
        w.validate();
        rc.train.resume_from = get<std::string>(tree, "train", "resume_from");
        rc.train.allow_hash_mismatch = get<bool>(tree, "train", "allow_hash_mismatch");
    });

    guarded("sampler", [&] {
        auto& s = rc.sampler;
        s.sampler.steps = get<int>(tree, "sampler", "steps");
        s.sampler.seed = rc.seed;
        s.sampler.mri_active = get<bool>(tree, "sampler", "mri_active");
        s.sampler.clip_x0 = get<bool>(tree, "sampler", "clip_x0");
        s.sampler.validate(rc.train.train.T);
        s.checkpoint = get<std::string>(tree, "sampler", "checkpoint");
        s.dataset = get<std::string>(tree, "sampler", "dataset");
        s.limit = get<int>(tree, "sampler", "limit");
        s.batch_size = get<int>(tree, "sampler", "batch_size");
        s.allow_hash_mismatch = get<bool>(tree, "sampler", "allow_hash_mismatch");
        if (s.limit < 0) throw ConfigError("sampler.limit must be >= 0");
        if (s.batch_size < 1) throw ConfigError("sampler.batch_size must be >= 1");
    });

    guarded("data", [&] {
        auto& d = rc.data;
        d.dir = get<std::string>(tree, "data", "dir");
        d.spec.subjects = get<int>(tree, "data", "subjects");
        d.spec.size = get<int>(tree, "data", "size");
        d.spec.orientations.clear();
        for (const auto& o : get<std::vector<std::string>>(tree, "data", "orientations"))
            d.spec.orientations.push_back(data::parse_orientation(o));
        d.spec.first_subject = get<int>(tree, "data", "first_subject");
        d.spec.min_foreground = get<double>(tree, "data", "min_foreground");
        d.spec.dose.drf = get<double>(tree, "data", "drf");
        d.spec.dose.total_counts = get<double>(tree, "data", "total_counts");
        d.spec.dose.mlem_iters = get<int>(tree, "data", "mlem_iters");
        d.spec.dose.n_angles = get<int>(tree, "data", "n_angles");
        d.spec.dose.post_filter_sigma = get<double>(tree, "data", "post_filter_sigma");
        d.spec.seed = rc.seed;
        d.target_psnr = get<double>(tree, "data", "target_psnr");
        d.spec.target_psnr = d.target_psnr;
        if (d.dir.empty()) throw ConfigError("data.dir must not be empty");
        if (d.spec.subjects < 1) throw ConfigError("data.subjects must be >= 1");
        if (d.spec.size < 16) throw ConfigError("data.size must be >= 16");
        if (d.spec.orientations.empty()) throw ConfigError("data.orientations must not be empty");
        if (d.spec.first_subject < 0) throw ConfigError("data.first_subject must be >= 0");
        if (!(d.spec.min_foreground >= 0.0 && d.spec.min_foreground < 1.0))
            throw ConfigError("data.min_foreground must be in [0, 1)");
        if (!(d.spec.dose.drf >= 1.0)) throw ConfigError("data.drf must be >= 1");
        if (!(d.spec.dose.total_counts > 0.0)) throw ConfigError("data.total_counts must be > 0");
        if (d.spec.dose.mlem_iters < 1) throw ConfigError("data.mlem_iters must be >= 1");
        if (d.spec.dose.n_angles < 0) throw ConfigError("data.n_angles must be >= 0");
        if (!(d.spec.dose.post_filter_sigma >= 0.0)) throw ConfigError("data.post_filter_sigma must be >= 0");
        if (!(d.target_psnr >= 0.0)) throw ConfigError("data.target_psnr must be >= 0");
    });

    guarded("metrics", [&] {
        rc.metrics.featurizer_seed = get_seed(tree.at("metrics").at("featurizer_seed"), "metrics.featurizer_seed");
        rc.metrics.predictions = get<std::map<std::string, std::string>>(tree, "metrics", "predictions");
        rc.metrics.reference = get<std::string>(tree, "metrics", "reference");
    });

    guarded("analysis", [&] {
        auto& a = rc.analysis;
        a.checkpoint = get<std::string>(tree, "analysis", "checkpoint");
        a.layers = get<std::vector<std::string>>(tree, "analysis", "layers");
        a.n_samples = get<int>(tree, "analysis", "n_samples");
        a.timestep = get<int>(tree, "analysis", "timestep");
        a.dataset = get<std::string>(tree, "analysis", "dataset");
        a.allow_hash_mismatch = get<bool>(tree, "analysis", "allow_hash_mismatch");
        if (a.n_samples < 2) throw ConfigError("analysis.n_samples must be >= 2");
        if (a.timestep < 0 || a.timestep > rc.train.train.T)
            throw ConfigError("analysis.timestep must be in [0, train.T]");
    });
    return rc;
}

std::string RunConfig::canonical_dump() const { return tree.dump(); }

std::string RunConfig::config_hash() const { return io::sha256_hex(canonical_dump()); }

std::string RunConfig::model_hash() const {
    Json sub{{"model", tree.at("model")},
             {"task2", tree.at("task2")},
             {"hff", tree.at("hff")},
             {"decoders", tree.at("decoders")},
             {"T", tree.at("train").at("T")},
             {"schedule", tree.at("train").at("schedule")}};
    return io::sha256_hex(sub.dump());
}

RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    Json tree = default_tree();
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path.string());
        Json user;
        try {
            user = Json::parse(f);
        } catch (const nlohmann::json::parse_error& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        tree = merge_strict(tree, user);
    }
    for (const auto& o : overrides) apply_override(tree, o);
    return from_tree(tree);
}

}  // namespace petdiff::config
