// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "petdiff/config.hpp"
#include "petdiff/errors.hpp"
#include "petdiff/io.hpp"
#include "test_util.hpp"

using namespace petdiff;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<data::SliceSample> toy_data(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<data::SliceSample> out;
    for (int i = 0; i < n; ++i) {
        data::SliceSample s;
        s.x_ld = tu::randu({8, 8}, rng);
        s.z_mri = tu::randu({8, 8}, rng);
        s.y0_sd = tu::randu({8, 8}, rng);
        out.push_back(std::move(s));
    }
    return out;
}

train::TrainConfig toy_train() {
    train::TrainConfig tc;
    tc.T = 50;
    tc.batch_size = 2;
    tc.seed = 3;
    tc.learning_rate = 1e-3;
    tc.mri_availability = 0.5;
    tc.epochs = 10;
    return tc;
}

nn::ModelConfig toy_model() {
    nn::ModelConfig mc = tu::tiny_config();
    mc.dropout = 0.1;
    return mc;
}

}  // namespace

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Pgm, RoundTripQuantisation) {
    const auto dir = tu::temp_dir("pgm");
    const Tensor img = tu::lcg_image(1, 9, 13);
    io::write_pgm16(dir / "a.pgm", img);
    const Tensor back = io::read_pgm16(dir / "a.pgm");
    ASSERT_EQ(back.shape(), img.shape());
    EXPECT_LE(tu::max_abs_diff(back, img), 0.5 / 65535 + 1e-15);
    io::write_pgm16(dir / "b.pgm", back);
    EXPECT_TRUE(bitwise_equal(io::read_pgm16(dir / "b.pgm"), back));
    Tensor bad = img;
    bad[0] = std::nan("");
    EXPECT_THROW(io::write_pgm16(dir / "c.pgm", bad), std::invalid_argument);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const auto dir = tu::temp_dir("ckpt");
    const auto data = toy_data(4, 1);
    const auto schedule = diffusion::build_schedule(50, diffusion::ScheduleKind::cosine);
    auto tc = toy_train();
    tc.max_steps = 3;
    train::TrainState st(toy_model(), tc);
    train::run_training(st, data, tc, schedule, train::LossWeights{});
    io::save_checkpoint(dir / "a.ckpt", io::capture_state(st, "h1"));
    const auto loaded = io::load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(loaded.config_hash, "h1");
    EXPECT_EQ(loaded.step, 3);
    io::save_checkpoint(dir / "b.ckpt", loaded);
    EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
    EXPECT_FALSE(std::filesystem::exists(dir / "a.ckpt.tmp"));
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptionIsDetected) {
    const auto dir = tu::temp_dir("ckpt_bad");
    train::TrainState st(toy_model(), toy_train());
    io::save_checkpoint(dir / "a.ckpt", io::capture_state(st, "h"));
    std::string bytes = slurp(dir / "a.ckpt");
    for (std::size_t pos : {bytes.size() / 2, bytes.size() - 40, std::size_t{20}}) {
        std::string b = bytes;
        b[pos] = static_cast<char>(b[pos] ^ 0x01);
        std::ofstream(dir / "bad.ckpt", std::ios::binary) << b;
        EXPECT_THROW(io::load_checkpoint(dir / "bad.ckpt"), DataError) << pos;
    }
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes.substr(0, 30);
    EXPECT_THROW(io::load_checkpoint(dir / "short.ckpt"), DataError);
    EXPECT_THROW(io::load_checkpoint(dir / "missing.ckpt"), DataError);
    std::filesystem::remove_all(dir);
}

TEST(Checkpoint, HashAndShapeGuards) {
    train::TrainState st(toy_model(), toy_train());
    const auto ck = io::capture_state(st, "abc");
    train::TrainState other(toy_model(), toy_train());
    EXPECT_THROW(io::restore_state(other, ck, "xyz"), ConfigError);
    EXPECT_NO_THROW(io::restore_state(other, ck, "xyz", true));
    nn::ModelConfig wider = toy_model();
    wider.base_channels = 8;
    nn::M2DiffModel m(wider, 0);
    EXPECT_THROW(io::load_weights(m, ck), ConfigError);
}

TEST(Checkpoint, ResumeIsBitExact) {
    const auto dir = tu::temp_dir("resume");
    const auto data = toy_data(5, 2);
    const auto schedule = diffusion::build_schedule(50, diffusion::ScheduleKind::cosine);
    auto tc = toy_train();
    tc.max_steps = 9;
    train::TrainState full(toy_model(), tc);
    train::run_training(full, data, tc, schedule, train::LossWeights{});

    auto first = tc;
    first.max_steps = 4;
    train::TrainState part(toy_model(), first);
    train::run_training(part, data, first, schedule, train::LossWeights{});
    io::save_checkpoint(dir / "p.ckpt", io::capture_state(part, "h"));

    train::TrainState resumed(toy_model(), tc);
    io::restore_state(resumed, io::load_checkpoint(dir / "p.ckpt"), "h");
    EXPECT_EQ(resumed.step, 4);
    train::run_training(resumed, data, tc, schedule, train::LossWeights{});
    EXPECT_EQ(resumed.step, full.step);
    EXPECT_EQ(resumed.epoch, full.epoch);
    const auto a = full.model.parameters(), b = resumed.model.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_TRUE(bitwise_equal(a[i].var.value(), b[i].var.value())) << a[i].name;
    for (std::size_t i = 0; i < full.adam.m.size(); ++i) ASSERT_TRUE(bitwise_equal(full.adam.m[i], resumed.adam.m[i]));
    std::filesystem::remove_all(dir);
}

TEST(Heatmap, WritesPpm) {
    const auto dir = tu::temp_dir("ppm");
    io::write_heatmap_ppm(dir / "h.ppm", Tensor({2, 3}, 0.5), 0.0, 1.0, 4);
    const std::string b = slurp(dir / "h.ppm");
    EXPECT_EQ(b.substr(0, 2), "P6");
    EXPECT_EQ(b.size(), std::string("P6\n12 8\n255\n").size() + 12 * 8 * 3);
    std::filesystem::remove_all(dir);
}

TEST(Config, DefaultsResolve) {
    const auto c = config::from_tree(config::default_tree());
    EXPECT_EQ(c.train.train.T, 1000);
    EXPECT_EQ(c.train.weights.lambda1, 0.4);
    EXPECT_EQ(c.train.weights.lambda2, 0.2);
    EXPECT_EQ(c.train.train.learning_rate, 1e-4);
    EXPECT_EQ(c.train.train.epochs, 100);
    EXPECT_TRUE(c.model.task2_enabled);
    EXPECT_TRUE(c.model.hff_enabled);
    EXPECT_EQ(c.config_hash().size(), 64u);
}

TEST(Config, UnknownKeysAndTypeChangesRejected) {
    const auto d = config::default_tree();
    EXPECT_THROW(config::merge_strict(d, {{"train", {{"lerning_rate", 1e-3}}}}), ConfigError);
    EXPECT_THROW(config::merge_strict(d, {{"bogus", 1}}), ConfigError);
    EXPECT_THROW(config::merge_strict(d, {{"train", {{"epochs", "ten"}}}}), ConfigError);
    EXPECT_THROW(config::merge_strict(d, {{"train", {{"epochs", 2.5}}}}), ConfigError);
    try {
        config::merge_strict(d, {{"train", {{"lerning_rate", 1e-3}}}});
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train.lerning_rate"), std::string::npos);
    }
    const auto ok = config::merge_strict(d, {{"metrics", {{"predictions", {{"ours", "a.jsonl"}}}}}});
    EXPECT_EQ(ok["metrics"]["predictions"]["ours"], "a.jsonl");
    EXPECT_EQ(config::merge_strict(d, {{"train", {{"learning_rate", 1}}}})["train"]["learning_rate"], 1);
}

TEST(Config, Overrides) {
    auto t = config::default_tree();
    config::apply_override(t, "train.learning_rate=0.002");
    config::apply_override(t, "data.dir=some/where");
    config::apply_override(t, "model.channel_multipliers=[1,2]");
    config::apply_override(t, "hff.enabled=false");
    EXPECT_EQ(t["train"]["learning_rate"], 0.002);
    EXPECT_EQ(t["data"]["dir"], "some/where");
    EXPECT_EQ(t["model"]["channel_multipliers"], nlohmann::json::array({1, 2}));
    EXPECT_EQ(t["hff"]["enabled"], false);
    EXPECT_THROW(config::apply_override(t, "train.nope=1"), ConfigError);
    EXPECT_THROW(config::apply_override(t, "no_equals_sign"), ConfigError);
    EXPECT_THROW(config::apply_override(t, "train.epochs=abc"), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
    auto t = config::default_tree();
    config::apply_override(t, "train.learning_rate=-1");
    EXPECT_THROW(config::from_tree(t), ConfigError);
    t = config::default_tree();
    config::apply_override(t, "task2.enabled=false");  // HFF still on
    EXPECT_THROW(config::from_tree(t), ConfigError);
    t = config::default_tree();
    config::apply_override(t, "data.orientations=[\"oblique\"]");
    EXPECT_THROW(config::from_tree(t), ConfigError);
}

TEST(Config, HashesTrackContent) {
    const auto base = config::load("", {});
    const auto same = config::load("", {});
    EXPECT_EQ(base.config_hash(), same.config_hash());
    const auto lr = config::load("", {"train.learning_rate=0.001"});
    EXPECT_NE(lr.config_hash(), base.config_hash());
    EXPECT_EQ(lr.model_hash(), base.model_hash());
    const auto arch = config::load("", {"model.base_channels=16"});
    EXPECT_NE(arch.model_hash(), base.model_hash());
    const auto sched = config::load("", {"train.T=500"});
    EXPECT_NE(sched.model_hash(), base.model_hash());
}

TEST(Config, LoadFromFile) {
    const auto dir = tu::temp_dir("cfg");
    std::ofstream(dir / "c.json") << R"({"seed": 5, "train": {"batch_size": 2}})";
    const auto c = config::load(dir / "c.json", {"train.batch_size=3"});
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.train.train.batch_size, 3);
    std::ofstream(dir / "bad.json") << "{not json";
    EXPECT_THROW(config::load(dir / "bad.json"), ConfigError);
    EXPECT_THROW(config::load(dir / "missing.json"), ConfigError);
    std::filesystem::remove_all(dir);
}
