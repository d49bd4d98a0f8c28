// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <random>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "petdiff/analysis.hpp"
#include "petdiff/config.hpp"
#include "petdiff/errors.hpp"
#include "petdiff/io.hpp"
#include "petdiff/metrics.hpp"
#include "petdiff/source_digest.hpp"

namespace petdiff::cli {

namespace fs = std::filesystem;
using config::Json;
using config::RunConfig;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Context {
    RunConfig rc;
    fs::path run_dir;
    std::shared_ptr<spdlog::logger> log;
};

std::string timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    return buf;
}

fs::path make_run_dir(const Invocation& inv, const RunConfig& rc) {
    if (!inv.run_dir.empty()) {
        fs::create_directories(inv.run_dir);
        return inv.run_dir;
    }
    const fs::path base =
        default_run_root() / fmt::format("{}-{}-{}", timestamp(), rc.config_hash().substr(0, 12), to_string(inv.command));
    fs::path dir = base;
    for (int k = 1; fs::exists(dir); ++k) dir = base.string() + "-" + std::to_string(k);
    fs::create_directories(dir);
    return dir;
}

std::shared_ptr<spdlog::logger> make_logger(const fs::path& run_dir, bool quiet) {
    std::vector<spdlog::sink_ptr> sinks;
    auto err = std::make_shared<spdlog::sinks::stderr_sink_mt>();
    err->set_level(quiet ? spdlog::level::warn : spdlog::level::info);
    sinks.push_back(err);
    if (!run_dir.empty()) sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>((run_dir / "log.txt").string()));
    auto log = std::make_shared<spdlog::logger>("petdiff", sinks.begin(), sinks.end());
    log->set_level(spdlog::level::debug);
    log->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    log->flush_on(spdlog::level::info);
    return log;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << text;
}

void write_run_record(const Context& ctx, const Invocation& inv) {
    Json j{{"command", to_string(inv.command)},
           {"version", kVersion},
           {"source_digest", kSourceDigest},
           {"config_hash", ctx.rc.config_hash()},
           {"model_hash", ctx.rc.model_hash()},
           {"seed", ctx.rc.seed},
           {"config_path", inv.config_path.string()},
           {"overrides", inv.overrides},
           {"started_utc", timestamp()}};
    write_text(ctx.run_dir / "run.json", j.dump(2) + "\n");
    write_text(ctx.run_dir / "config.json", ctx.rc.tree.dump(2) + "\n");
}

bool model_reads_mri(const nn::ModelConfig& m) { return m.task2_enabled || m.single_task_uses_mri; }

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
    return data::subject_seed(seed, static_cast<int>(k));
}

io::Checkpoint load_checked(const fs::path& path, const RunConfig& rc, bool allow_mismatch, spdlog::logger& log) {
    if (path.empty()) throw ConfigError("no checkpoint given");
    io::Checkpoint ckpt = io::load_checkpoint(path);
    if (ckpt.config_hash != rc.model_hash()) {
        if (!allow_mismatch)
            throw ConfigError("checkpoint " + path.string() + " was written for model hash " + ckpt.config_hash +
                              ", this config has " + rc.model_hash());
        log.warn("loading checkpoint with mismatched model hash {}", ckpt.config_hash);
    }
    return ckpt;
}

// simulate-dose ------------------------------------------------------------

int cmd_simulate(Context& ctx) {
    const auto& spec = ctx.rc.data.spec;
    const fs::path out = ctx.run_dir / "dataset";
    ctx.log->info("simulating {} subjects at {}^3, drf {}{}", spec.subjects, spec.size, spec.dose.drf,
                  spec.target_psnr > 0 ? fmt::format(" (target PSNR {} dB)", spec.target_psnr) : "");
    std::vector<data::SliceSample> all;
    Json subjects = Json::array();
    for (int i = spec.first_subject; i < spec.first_subject + spec.subjects; ++i) {
        data::DatasetSpec one = spec;
        one.first_subject = i;
        one.subjects = 1;
        std::vector<data::Subject> subj;
        auto samples = data::build_dataset(one, &subj);
        double psnr_sum = 0.0;
        for (const auto& s : samples) psnr_sum += metrics::psnr(s.x_ld, s.y0_sd);
        const double mean_psnr = samples.empty() ? 0.0 : psnr_sum / static_cast<double>(samples.size());
        subjects.push_back({{"subject", subj[0].id},
                            {"seed", subj[0].seed},
                            {"drf", subj[0].drf},
                            {"lesions", subj[0].phantom.lesion_count},
                            {"slices", samples.size()},
                            {"ld_psnr_mean", mean_psnr}});
        ctx.log->info("{}: {} slices, drf {:.3g}, low-dose PSNR {:.2f} dB", subj[0].id, samples.size(), subj[0].drf,
                      mean_psnr);
        for (auto& s : samples) all.push_back(std::move(s));
    }
    data::save_dataset(out, all, spec.seed);
    write_text(ctx.run_dir / "dose_report.json", Json{{"subjects", subjects}}.dump(2) + "\n");
    ctx.log->info("wrote {} slices to {}", all.size(), out.string());
    std::cout << "dataset " << out.string() << "\n";
    return ok;
}

// train ----------------------------------------------------------------------

int cmd_train(Context& ctx) {
    const auto& rc = ctx.rc;
    const auto& tc = rc.train.train;
    const bool need_mri = model_reads_mri(rc.model);
    auto dataset = data::load_dataset(rc.data.dir, need_mri);
    for (const auto& s : dataset)
        if (s.x_ld.dim(0) != rc.model.input_size || s.x_ld.dim(1) != rc.model.input_size)
            throw DataError(fmt::format("slice {} {} is {}, model input_size is {}", s.subject_id, s.slice_index,
                                        shape_str(s.x_ld.shape()), rc.model.input_size));
    ctx.log->info("training on {} slices from {}", dataset.size(), rc.data.dir);
    const auto schedule = diffusion::build_schedule(tc.T, tc.schedule);
    train::TrainState state(rc.model, tc);
    ctx.log->info("model parameters: {}", state.model.parameter_count());
    if (!rc.train.resume_from.empty()) {
        const auto ckpt = load_checked(rc.train.resume_from, rc, rc.train.allow_hash_mismatch, *ctx.log);
        io::restore_state(state, ckpt, ckpt.config_hash, true);
        ctx.log->info("resumed from {} at step {}", rc.train.resume_from, state.step);
    }
    train::TrainingLog tlog(ctx.run_dir / "train_log.tsv");
    const auto t0 = std::chrono::steady_clock::now();
    auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    const std::string hash = rc.model_hash();
    train::TrainCallbacks cb;
    cb.on_step = [&](const train::LossRecord& r) {
        tlog.write(r, wall());
        if (r.step % std::max(1, tc.log_every * 25) == 0 || r.step == 1)
            ctx.log->info("step {} epoch {} total {:.6g} (pet {:.4g} mri {:.4g} bias {:.4g} vlb {:.4g})", r.step,
                          r.epoch, r.total, r.pet, r.mri, r.bias, r.vlb);
    };
    cb.on_checkpoint = [&](const train::TrainState& s) {
        const fs::path p = ctx.run_dir / "checkpoints" / fmt::format("step_{:08d}.ckpt", s.step);
        io::save_checkpoint(p, io::capture_state(s, hash));
        ctx.log->info("checkpoint {}", p.string());
    };
    train::run_training(state, dataset, tc, schedule, rc.train.weights, cb);
    const fs::path final_path = ctx.run_dir / "checkpoint.ckpt";
    io::save_checkpoint(final_path, io::capture_state(state, hash));
    const std::string digest = io::sha256_file(final_path);
    ctx.log->info("finished at step {} ({:.1f} s); checkpoint {} sha256 {}", state.step, wall(), final_path.string(),
                  digest);
    std::cout << "checkpoint " << final_path.string() << "\nsha256 " << digest << "\n";
    return ok;
}

// sample ---------------------------------------------------------------------

std::string slice_stem(const data::SliceSample& s) {
    return fmt::format("{}_{}_{:04d}", s.subject_id, data::to_string(s.orientation), s.slice_index);
}

int cmd_sample(Context& ctx) {
    const auto& rc = ctx.rc;
    const auto& sc = rc.sampler;
    const auto ckpt = load_checked(sc.checkpoint, rc, sc.allow_hash_mismatch, *ctx.log);
    nn::M2DiffModel model(rc.model, rc.seed);
    io::load_weights(model, ckpt);
    const auto schedule = diffusion::build_schedule(rc.train.train.T, rc.train.train.schedule);
    const fs::path src = sc.dataset.empty() ? fs::path(rc.data.dir) : fs::path(sc.dataset);
    const bool read_mri = sc.sampler.mri_active && model_reads_mri(rc.model);
    auto dataset = data::load_dataset(src, read_mri);
    if (sc.limit > 0 && static_cast<std::size_t>(sc.limit) < dataset.size()) dataset.resize(static_cast<std::size_t>(sc.limit));
    ctx.log->info("sampling {} slices from {} ({} steps, MRI {})", dataset.size(), src.string(),
                  sc.sampler.steps == 0 ? schedule.T : sc.sampler.steps, read_mri ? "on" : "off");

    const fs::path out = ctx.run_dir / "predictions";
    fs::create_directories(out);
    std::ofstream manifest(out / "predictions.jsonl");
    if (!manifest) throw DataError("cannot write predictions manifest");
    std::size_t i = 0;
    std::uint64_t batch_index = 0;
    while (i < dataset.size()) {
        const bool active = read_mri && dataset[i].mri_active;
        std::vector<Tensor> xs, zs;
        std::size_t j = i;
        while (j < dataset.size() && xs.size() < static_cast<std::size_t>(sc.batch_size) &&
               (read_mri && dataset[j].mri_active) == active) {
            xs.push_back(dataset[j].x_ld);
            if (active) zs.push_back(dataset[j].z_mri);
            ++j;
        }
        sampling::SamplerConfig cfg = sc.sampler;
        cfg.mri_active = active;
        cfg.seed = mix_seed(rc.seed, batch_index++);
        const Tensor pred = sampling::sample(model, nn::stack_images(xs), active ? nn::stack_images(zs) : Tensor{},
                                             cfg, schedule);
        for (std::size_t k = i; k < j; ++k) {
            const Tensor img = nn::unstack_image(pred, static_cast<std::int64_t>(k - i));
            const std::string stem = slice_stem(dataset[k]);
            io::write_pgm16(out / (stem + ".pgm"), img);
            data::write_raw(out / (stem + ".raw"), img);
            manifest << Json{{"subject", dataset[k].subject_id},
                             {"orientation", data::to_string(dataset[k].orientation)},
                             {"index", dataset[k].slice_index},
                             {"mri_active", active},
                             {"image", stem + ".pgm"},
                             {"raw", stem + ".raw"}}
                            .dump()
                     << "\n";
        }
        ctx.log->info("sampled {}/{}", j, dataset.size());
        i = j;
    }
    Json sidecar{{"seed", rc.seed},
                 {"steps", sc.sampler.steps == 0 ? schedule.T : sc.sampler.steps},
                 {"mri_active", read_mri},
                 {"clip_x0", sc.sampler.clip_x0},
                 {"checkpoint", sc.checkpoint},
                 {"checkpoint_sha256", io::sha256_file(sc.checkpoint)},
                 {"model_hash", rc.model_hash()},
                 {"dataset", src.string()},
                 {"slices", dataset.size()}};
    write_text(out / "sample.json", sidecar.dump(2) + "\n");
    std::cout << "predictions " << out.string() << "\n";
    return ok;
}

// evaluate -------------------------------------------------------------------

using SliceKey = std::tuple<std::string, std::string, int>;

std::map<SliceKey, Tensor> load_predictions(const std::string& spec, const std::vector<data::SliceSample>& reference) {
    std::map<SliceKey, Tensor> out;
    auto key = [](const data::SliceSample& s) {
        return SliceKey{s.subject_id, std::string(data::to_string(s.orientation)), s.slice_index};
    };
    if (spec == "@ld") {
        for (const auto& s : reference) out[key(s)] = s.x_ld;
        return out;
    }
    fs::path p(spec);
    if (fs::is_directory(p)) {
        if (fs::exists(p / "predictions.jsonl"))
            p /= "predictions.jsonl";
        else if (fs::exists(p / "predictions" / "predictions.jsonl"))
            p = p / "predictions" / "predictions.jsonl";
        else if (fs::exists(p / "manifest.jsonl")) {
            for (const auto& s : data::load_dataset(p, false)) out[key(s)] = s.y0_sd;
            return out;
        } else {
            throw DataError(spec + ": no predictions.jsonl or manifest.jsonl found");
        }
    }
    std::ifstream f(p);
    if (!f) throw DataError("cannot open predictions " + p.string());
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
            out[{j.at("subject").get<std::string>(), j.at("orientation").get<std::string>(), j.at("index").get<int>()}] =
                data::read_raw(p.parent_path() / j.at("raw").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError(p.string() + ": malformed record: " + e.what());
        }
    }
    return out;
}

int cmd_evaluate(Context& ctx) {
    const auto& rc = ctx.rc;
    if (rc.metrics.predictions.empty()) throw ConfigError("metrics.predictions is empty (method -> path)");
    const fs::path ref_dir = rc.metrics.reference.empty() ? fs::path(rc.data.dir) : fs::path(rc.metrics.reference);
    const auto reference = data::load_dataset(ref_dir, false);
    metrics::EvalReport report;
    for (const auto& [method, spec] : rc.metrics.predictions) {
        const auto preds = load_predictions(spec, reference);
        std::size_t matched = 0;
        for (const auto& s : reference) {
            const SliceKey k{s.subject_id, std::string(data::to_string(s.orientation)), s.slice_index};
            auto it = preds.find(k);
            if (it == preds.end()) continue;
            auto r = metrics::evaluate_slice(it->second, s.y0_sd, rc.metrics.featurizer_seed);
            r.method = method;
            r.subject = s.subject_id;
            r.orientation = std::get<1>(k);
            r.slice = s.slice_index;
            report.per_slice.push_back(r);
            ++matched;
        }
        if (matched == 0) throw DataError("method '" + method + "' has no slices matching the reference");
        if (matched != preds.size())
            ctx.log->warn("method '{}': {} of {} predictions have no reference slice", method, preds.size() - matched,
                          preds.size());
        ctx.log->info("method '{}': {} slices", method, matched);
    }
    report.finalize();
    report.write_json(ctx.run_dir / "report.json");
    report.write_slices_tsv(ctx.run_dir / "slices.tsv");
    const std::string table = report.format_table();
    write_text(ctx.run_dir / "table.txt", table);
    std::cout << table;
    for (const auto& t : report.tests) {
        if (t.degenerate)
            std::cout << fmt::format("{} vs {} [{}]: degenerate\n", t.method_a, t.method_b, t.metric);
        else
            std::cout << fmt::format("{} vs {} [{}]: t = {:.4f}, p = {:.4g}\n", t.method_a, t.method_b, t.metric, t.t,
                                     t.p);
    }
    return ok;
}

// analyze-cka ----------------------------------------------------------------

int cmd_cka(Context& ctx) {
    const auto& rc = ctx.rc;
    const auto& ac = rc.analysis;
    if (!rc.model.task2_enabled) throw ConfigError("CKA analysis needs a two-branch model (task2.enabled)");
    const auto ckpt = load_checked(ac.checkpoint, rc, ac.allow_hash_mismatch, *ctx.log);
    nn::M2DiffModel model(rc.model, rc.seed);
    io::load_weights(model, ckpt);
    const auto schedule = diffusion::build_schedule(rc.train.train.T, rc.train.train.schedule);
    const fs::path src = ac.dataset.empty() ? fs::path(rc.data.dir) : fs::path(ac.dataset);
    std::vector<data::SliceSample> pool;
    for (auto& s : data::load_dataset(src, true))
        if (s.mri_active) pool.push_back(std::move(s));
    if (pool.size() < 2) throw DataError("need at least two MRI-active slices for CKA");
    const std::size_t n = std::min(pool.size(), static_cast<std::size_t>(ac.n_samples));
    std::vector<data::SliceSample> batch;
    for (std::size_t k = 0; k < n; ++k) batch.push_back(pool[k * pool.size() / n]);
    if (n < 64) ctx.log->warn("CKA on {} samples; estimates are biased below 64", n);

    std::vector<std::string> enc, dec;
    if (ac.layers.empty()) {
        enc = analysis::encoder_layer_ids(rc.model);
        if (rc.model.dual_decoders()) dec = analysis::decoder_layer_ids(rc.model);
    } else {
        for (const auto& l : ac.layers) (l.rfind("dec.", 0) == 0 ? dec : enc).push_back(l);
    }
    analysis::CaptureOptions opt;
    opt.timestep = ac.timestep;
    opt.seed = rc.seed;
    Json summary;
    auto stage = [&](const std::vector<std::string>& ids, const std::string& name) {
        if (ids.empty()) return;
        const auto acts = analysis::capture_activations(model, batch, ids, schedule, opt);
        const std::size_t m = ids.size();
        std::vector<analysis::ActivationMatrix> pet(acts.begin(), acts.begin() + static_cast<std::ptrdiff_t>(m));
        std::vector<analysis::ActivationMatrix> mri(acts.begin() + static_cast<std::ptrdiff_t>(m), acts.end());
        const auto mat = analysis::cka_matrix(pet, mri);
        mat.write_tsv(ctx.run_dir / ("cka_" + name + ".tsv"));
        io::write_heatmap_ppm(ctx.run_dir / ("cka_" + name + ".ppm"), mat.values);
        Json diag = Json::object();
        for (std::size_t i = 0; i < m; ++i) {
            diag[ids[i]] = mat.at(i, i);
            ctx.log->info("{} {}: CKA(pet, mri) = {:.4f}", name, ids[i], mat.at(i, i));
        }
        summary[name] = {{"layers", ids}, {"diagonal", diag}};
    };
    stage(enc, "encoder");
    stage(dec, "decoder");
    summary["n_samples"] = n;
    write_text(ctx.run_dir / "cka.json", summary.dump(2) + "\n");
    std::cout << "cka " << (ctx.run_dir / "cka.json").string() << "\n";
    return ok;
}

}  // namespace

std::optional<Command> parse_command(const std::string& name) {
    static const std::map<std::string, Command> m{{"simulate-dose", Command::simulate_dose},
                                                  {"train", Command::train},
                                                  {"sample", Command::sample},
                                                  {"evaluate", Command::evaluate},
                                                  {"analyze-cka", Command::analyze_cka}};
    auto it = m.find(name);
    if (it == m.end()) return std::nullopt;
    return it->second;
}

std::string to_string(Command c) {
    switch (c) {
        case Command::simulate_dose: return "simulate-dose";
        case Command::train: return "train";
        case Command::sample: return "sample";
        case Command::evaluate: return "evaluate";
        case Command::analyze_cka: return "analyze-cka";
    }
    return "?";
}

fs::path default_run_root() {
    const char* env = std::getenv("PETDIFF_RUN_ROOT");
    return env && *env ? fs::path(env) : fs::path("runs");
}

std::string source_digest() { return kSourceDigest; }

int run(const Invocation& inv) {
    std::shared_ptr<spdlog::logger> log = make_logger({}, inv.quiet);
    try {
        std::vector<std::string> overrides = inv.overrides;
        if (inv.seed) overrides.push_back("seed=" + std::to_string(*inv.seed));
        Context ctx{config::load(inv.config_path, overrides), {}, nullptr};
        ctx.run_dir = make_run_dir(inv, ctx.rc);
        ctx.log = log = make_logger(ctx.run_dir, inv.quiet);
        Invocation recorded = inv;
        recorded.overrides = overrides;
        write_run_record(ctx, recorded);
        log->info("petdiff {} ({}), run dir {}, config {}", to_string(inv.command), kVersion, ctx.run_dir.string(),
                  ctx.rc.config_hash().substr(0, 12));
        switch (inv.command) {
            case Command::simulate_dose: return cmd_simulate(ctx);
            case Command::train: return cmd_train(ctx);
            case Command::sample: return cmd_sample(ctx);
            case Command::evaluate: return cmd_evaluate(ctx);
            case Command::analyze_cka: return cmd_cka(ctx);
        }
        return usage_error;
    } catch (const ConfigError& e) {
        log->error("config error: {}", e.what());
        return config_error;
    } catch (const DataError& e) {
        log->error("data error: {}", e.what());
        return data_error;
    } catch (const NumericalError& e) {
        log->error("numerical failure: {}", e.what());
        return numerical_error;
    } catch (const fs::filesystem_error& e) {
        log->error("data error: {}", e.what());
        return data_error;
    } catch (const std::exception& e) {
        log->error("error: {}", e.what());
        return usage_error;
    }
}

int main(int argc, char** argv) {
    CLI::App app{"petdiff: MRI-guided low-dose PET diffusion toolkit"};
    app.set_version_flag("--version", std::string(kVersion) + " (" + kSourceDigest + ")");
    app.require_subcommand(1);
    Invocation inv;
    std::string config_path, run_dir;
    std::uint64_t seed = 0;
    for (const char* name : {"simulate-dose", "train", "sample", "evaluate", "analyze-cka"}) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("-c,--config", config_path, "JSON config file");
        sub->add_option("-o,--override,--overrides", inv.overrides, "key=value (repeatable)");
        sub->add_option("--run-dir", run_dir, "output directory (default: $PETDIFF_RUN_ROOT/<stamp>-<hash>-<cmd>)");
        sub->add_option("--seed", seed, "top-level seed");
        sub->add_flag("-q,--quiet", inv.quiet, "warnings and errors only");
        sub->callback([&, name] {
            inv.command = *parse_command(name);
            if (sub->count("--seed")) inv.seed = seed;
        });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage_error;
    }
    inv.config_path = config_path;
    inv.run_dir = run_dir;
    return run(inv);
}

}  // namespace petdiff::cli
