// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>

#include "../tools/src/cli.hpp"
#include "petdiff/data.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using petdiff::cli::ExitCode;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result petdiff_cmd(const std::string& args, const fs::path& scratch) {
    const fs::path log = scratch / "stdout.txt";
    const std::string cmd = std::string(PETDIFF_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    Result r;
    r.out.assign(std::istreambuf_iterator<char>(in), {});
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// 16^3 phantoms, tiny network: every workflow finishes in seconds.
void write_config(const fs::path& path) {
    nlohmann::json j = {
        {"seed", 7},
        {"model",
         {{"base_channels", 4},
          {"channel_multipliers", {1, 2}},
          {"attention_levels", {2}},
          {"num_res_blocks", 1},
          {"input_size", 16}}},
        {"train", {{"T", 20}, {"batch_size", 2}, {"max_steps", 2}, {"learning_rate", 0.001}}},
        {"sampler", {{"steps", 3}, {"limit", 3}, {"batch_size", 2}}},
        {"data", {{"subjects", 1}, {"size", 16}, {"min_foreground", 0.0}}},
        {"analysis", {{"n_samples", 4}}}};
    std::ofstream(path) << j.dump(2);
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir = petdiff::tu::temp_dir("cli");
        cfg = dir / "cfg.json";
        write_config(cfg);
    }
    void TearDown() override { fs::remove_all(dir); }
    std::string base(const std::string& cmd, const std::string& run) const {
        return cmd + " -q -c " + cfg.string() + " --run-dir " + (dir / run).string();
    }
    fs::path simulate() {
        const auto r = petdiff_cmd(base("simulate-dose", "sim"), dir);
        EXPECT_EQ(r.code, 0) << r.out;
        return dir / "sim" / "dataset";
    }
    fs::path dir, cfg;
};

}  // namespace

TEST(CliParse, Commands) {
    using petdiff::cli::Command;
    EXPECT_EQ(petdiff::cli::parse_command("simulate-dose"), Command::simulate_dose);
    EXPECT_EQ(petdiff::cli::parse_command("analyze-cka"), Command::analyze_cka);
    EXPECT_FALSE(petdiff::cli::parse_command("fly").has_value());
    EXPECT_EQ(petdiff::cli::to_string(Command::evaluate), "evaluate");
}

TEST_F(Cli, UsageErrors) {
    EXPECT_EQ(petdiff_cmd("", dir).code, ExitCode::usage_error);
    EXPECT_EQ(petdiff_cmd("fly", dir).code, ExitCode::usage_error);
    EXPECT_EQ(petdiff_cmd("train --no-such-flag", dir).code, ExitCode::usage_error);
    EXPECT_EQ(petdiff_cmd("--version", dir).code, ExitCode::ok);
}

TEST_F(Cli, ConfigErrors) {
    auto r = petdiff_cmd(base("train", "r1") + " -o train.lerning_rate=1", dir);
    EXPECT_EQ(r.code, ExitCode::config_error);
    EXPECT_NE(r.out.find("train.lerning_rate"), std::string::npos) << r.out;
    EXPECT_EQ(petdiff_cmd("train -q -c " + (dir / "nope.json").string() + " --run-dir " + (dir / "r2").string(), dir).code,
              ExitCode::config_error);
    EXPECT_EQ(petdiff_cmd(base("sample", "r3"), dir).code, ExitCode::config_error);  // no checkpoint
}

TEST_F(Cli, DataErrors) {
    EXPECT_EQ(petdiff_cmd(base("train", "r1") + " -o data.dir=" + (dir / "missing").string(), dir).code,
              ExitCode::data_error);
    const fs::path ds = simulate();
    EXPECT_EQ(petdiff_cmd(base("train", "r2") + " -o data.dir=" + ds.string() + " -o model.input_size=32", dir).code,
              ExitCode::data_error);
}

TEST_F(Cli, NumericalErrorOnNonFiniteInput) {
    const fs::path ds = simulate();
    const auto recs = petdiff::data::read_manifest(ds / "manifest.jsonl");
    ASSERT_FALSE(recs.empty());
    petdiff::Tensor bad = petdiff::data::read_raw(ds / recs[0].x_ld_path);
    bad[3] = std::nan("");
    petdiff::data::write_raw(ds / recs[0].x_ld_path, bad);
    const auto r = petdiff_cmd(base("train", "r") + " -o data.dir=" + ds.string() + " -o train.batch_size=100", dir);
    EXPECT_EQ(r.code, ExitCode::numerical_error) << r.out;
}

TEST_F(Cli, EndToEndWorkflow) {
    const fs::path ds = simulate();
    EXPECT_TRUE(fs::exists(dir / "sim" / "dose_report.json"));
    EXPECT_TRUE(fs::exists(dir / "sim" / "run.json"));
    EXPECT_TRUE(fs::exists(dir / "sim" / "config.json"));
    const std::string data = " -o data.dir=" + ds.string();

    // Two identical training runs give byte-identical checkpoints.
    ASSERT_EQ(petdiff_cmd(base("train", "t1") + data, dir).code, 0);
    ASSERT_EQ(petdiff_cmd(base("train", "t2") + data, dir).code, 0);
    const fs::path ck = dir / "t1" / "checkpoint.ckpt";
    EXPECT_EQ(slurp(ck), slurp(dir / "t2" / "checkpoint.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "t1" / "train_log.tsv"));

    // Sampling with MRI disabled never opens the MRI files.
    const fs::path pet_only = dir / "pet_only";
    fs::copy(ds, pet_only, fs::copy_options::recursive);
    for (const auto& r : petdiff::data::read_manifest(pet_only / "manifest.jsonl")) fs::remove(pet_only / r.z_mri_path);
    const std::string samp = data + " -o sampler.checkpoint=" + ck.string();
    auto r = petdiff_cmd(base("sample", "s_off") + samp + " -o sampler.mri_active=false -o sampler.dataset=" +
                             pet_only.string(),
                         dir);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(petdiff_cmd(base("sample", "s_bad") + samp + " -o sampler.dataset=" + pet_only.string(), dir).code,
              ExitCode::data_error);
    ASSERT_EQ(petdiff_cmd(base("sample", "s_on") + samp, dir).code, 0);
    const auto side = nlohmann::json::parse(slurp(dir / "s_on" / "predictions" / "sample.json"));
    EXPECT_EQ(side.at("slices"), 3);
    EXPECT_EQ(side.at("mri_active"), true);

    // A wrong architecture is refused unless explicitly allowed.
    EXPECT_EQ(petdiff_cmd(base("sample", "s_hash") + samp + " -o train.T=30", dir).code, ExitCode::config_error);

    // Evaluating the reference against itself gives the identity scores.
    const std::string preds = "'metrics.predictions={\"gt\":\"" + ds.string() + "\",\"ld\":\"@ld\",\"net\":\"" +
                              (dir / "s_on").string() + "\"}'";
    r = petdiff_cmd(base("evaluate", "e") + data + " -o " + preds, dir);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(r.out.find("±"), std::string::npos);
    const auto rep = nlohmann::json::parse(slurp(dir / "e" / "report.json"));
    for (const auto& a : rep.at("aggregates")) {
        if (a.at("method") != "gt") continue;
        if (a.at("metric") == "ssim") EXPECT_NEAR(a.at("mean").get<double>(), 1.0, 1e-12);
        if (a.at("metric") == "psnr") EXPECT_EQ(a.at("mean").get<double>(), 100.0);
        if (a.at("metric") == "nmse") EXPECT_EQ(a.at("mean").get<double>(), 0.0);
        if (a.at("metric") == "lpips_proxy") EXPECT_EQ(a.at("mean").get<double>(), 0.0);
    }
    EXPECT_TRUE(fs::exists(dir / "e" / "slices.tsv"));

    r = petdiff_cmd(base("analyze-cka", "c") + data + " -o analysis.checkpoint=" + ck.string(), dir);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_TRUE(fs::exists(dir / "c" / "cka_encoder.tsv"));
    EXPECT_TRUE(fs::exists(dir / "c" / "cka_decoder.ppm"));

    // Resume continues from the saved step.
    r = petdiff_cmd(base("train", "t3") + data + " -o train.max_steps=3 -o train.resume_from=" + ck.string(), dir);
    ASSERT_EQ(r.code, 0) << r.out;
    EXPECT_NE(slurp(dir / "t3" / "train_log.tsv").find("\n3\t"), std::string::npos);
}

TEST_F(Cli, DefaultRunDirUsesRoot) {
    setenv("PETDIFF_RUN_ROOT", (dir / "root").string().c_str(), 1);
    const auto r = petdiff_cmd("simulate-dose -q -c " + cfg.string(), dir);
    unsetenv("PETDIFF_RUN_ROOT");
    ASSERT_EQ(r.code, 0) << r.out;
    int runs = 0;
    for (const auto& e : fs::directory_iterator(dir / "root")) {
        ++runs;
        EXPECT_NE(e.path().filename().string().find("-simulate-dose"), std::string::npos);
    }
    EXPECT_EQ(runs, 1);
}
