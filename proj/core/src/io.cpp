// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "petdiff/errors.hpp"

namespace petdiff::io {

namespace {

constexpr std::string_view kCkptMagic = "PETDIFF-CKPT\n";
constexpr std::size_t kDigestBytes = 32;

std::string read_all(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::array<unsigned char, kDigestBytes> sha256_raw(std::string_view bytes) {
    std::array<unsigned char, kDigestBytes> out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != kDigestBytes)
        throw std::runtime_error("SHA-256 computation failed");
    return out;
}

void append_tensor(std::string& blob, const Tensor& t) {
    blob.append(reinterpret_cast<const char*>(t.data()), static_cast<std::size_t>(t.size()) * sizeof(double));
}

std::array<int, 3> colormap(double v) {
    // Piecewise-linear dark blue -> teal -> yellow.
    v = std::clamp(v, 0.0, 1.0);
    const double stops[3][3] = {{0.07, 0.04, 0.33}, {0.13, 0.57, 0.55}, {0.99, 0.91, 0.14}};
    const double s = v * 2.0;
    const int i = std::min(1, static_cast<int>(s));
    const double f = s - i;
    std::array<int, 3> rgb{};
    for (int c = 0; c < 3; ++c)
        rgb[static_cast<std::size_t>(c)] =
            static_cast<int>(std::lround(255.0 * ((1.0 - f) * stops[i][c] + f * stops[i + 1][c])));
    return rgb;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    static constexpr char hex[] = "0123456789abcdef";
    std::string s;
    for (unsigned char c : sha256_raw(bytes)) {
        s += hex[c >> 4];
        s += hex[c & 15];
    }
    return s;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_all(path)); }

void write_pgm16(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2) throw std::invalid_argument("write_pgm16: expected an (H, W) image");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    f << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n65535\n";
    for (double v : image.vec()) {
        if (std::isnan(v)) throw std::invalid_argument("write_pgm16: NaN pixel");
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
        const char b[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
        f.write(b, 2);
    }
}

Tensor read_pgm16(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path.string());
    std::string magic;
    std::int64_t w = 0, h = 0, maxv = 0;
    f >> magic >> w >> h >> maxv;
    if (magic != "P5" || maxv != 65535 || w <= 0 || h <= 0) throw DataError(path.string() + ": not a 16-bit PGM");
    f.get();
    Tensor t({h, w});
    for (std::int64_t i = 0; i < t.size(); ++i) {
        unsigned char b[2];
        if (!f.read(reinterpret_cast<char*>(b), 2)) throw DataError(path.string() + ": truncated PGM");
        t[i] = static_cast<double>((b[0] << 8) | b[1]) / 65535.0;
    }
    return t;
}

void write_heatmap_ppm(const std::filesystem::path& path, const Tensor& matrix, double lo, double hi, int cell) {
    if (matrix.rank() != 2) throw std::invalid_argument("write_heatmap_ppm: expected a 2D matrix");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path.string());
    const std::int64_t R = matrix.dim(0), C = matrix.dim(1);
    f << "P6\n" << C * cell << ' ' << R * cell << "\n255\n";
    for (std::int64_t y = 0; y < R * cell; ++y)
        for (std::int64_t x = 0; x < C * cell; ++x) {
            const double v = matrix[(y / cell) * C + x / cell];
            const auto rgb = colormap(hi > lo ? (v - lo) / (hi - lo) : 0.0);
            for (int c : rgb) f.put(static_cast<char>(c));
        }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");
    nlohmann::json h;
    h["format_version"] = ckpt.format_version;
    h["config_hash"] = ckpt.config_hash;
    h["epoch"] = ckpt.epoch;
    h["step"] = ckpt.step;
    h["rng_state"] = ckpt.rng_state;
    h["order"] = ckpt.order;
    h["cursor"] = ckpt.cursor;
    h["adam_steps"] = ckpt.adam_steps;
    std::string blob;
    std::int64_t offset = 0;
    auto describe = [&](const std::string& name, const std::string& kind, const Tensor& t) {
        nlohmann::json e;
        e["name"] = name;
        e["kind"] = kind;
        e["dtype"] = "float64";
        e["shape"] = t.shape();
        e["offset"] = offset;
        offset += t.size();
        append_tensor(blob, t);
        return e;
    };
    h["tensors"] = nlohmann::json::array();
    for (const auto& p : ckpt.params) h["tensors"].push_back(describe(p.name, "param", p.value));
    for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
        const std::string name = i < ckpt.params.size() ? ckpt.params[i].name : std::to_string(i);
        h["tensors"].push_back(describe(name, "adam_m", ckpt.adam_m[i]));
        h["tensors"].push_back(describe(name, "adam_v", ckpt.adam_v[i]));
    }
    const std::string header = h.dump(1);
    std::string bytes(kCkptMagic);
    const std::uint64_t hlen = header.size();
    bytes.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
    bytes += header;
    bytes += blob;
    const auto digest = sha256_raw(bytes);
    bytes.append(reinterpret_cast<const char*>(digest.data()), digest.size());
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw DataError("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw DataError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_all(path);
    if (bytes.size() < kCkptMagic.size() + 8 + kDigestBytes || bytes.compare(0, kCkptMagic.size(), kCkptMagic) != 0)
        throw DataError(path.string() + ": not a petdiff checkpoint");
    const std::string_view body(bytes.data(), bytes.size() - kDigestBytes);
    const auto digest = sha256_raw(body);
    if (std::memcmp(digest.data(), bytes.data() + body.size(), kDigestBytes) != 0)
        throw DataError(path.string() + ": checksum mismatch (file is corrupted)");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + kCkptMagic.size(), sizeof hlen);
    const std::size_t hstart = kCkptMagic.size() + sizeof hlen;
    if (hstart + hlen > body.size()) throw DataError(path.string() + ": bad header length");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(body.substr(hstart, hlen));
    } catch (const std::exception& e) {
        throw DataError(path.string() + ": unreadable header: " + e.what());
    }
    Checkpoint c;
    c.format_version = h.at("format_version").get<int>();
    if (c.format_version != kCheckpointVersion)
        throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(c.format_version));
    c.config_hash = h.at("config_hash").get<std::string>();
    c.epoch = h.at("epoch").get<int>();
    c.step = h.at("step").get<std::int64_t>();
    c.rng_state = h.at("rng_state").get<std::string>();
    c.order = h.at("order").get<std::vector<int>>();
    c.cursor = h.at("cursor").get<std::int64_t>();
    c.adam_steps = h.at("adam_steps").get<std::vector<std::int64_t>>();
    const char* payload = body.data() + hstart + hlen;
    const std::size_t payload_doubles = (body.size() - hstart - hlen) / sizeof(double);
    for (const auto& e : h.at("tensors")) {
        Tensor t(e.at("shape").get<Shape>());
        const auto off = e.at("offset").get<std::int64_t>();
        if (off < 0 || static_cast<std::size_t>(off + t.size()) > payload_doubles)
            throw DataError(path.string() + ": tensor extends past payload");
        std::memcpy(t.data(), payload + off * static_cast<std::int64_t>(sizeof(double)),
                    static_cast<std::size_t>(t.size()) * sizeof(double));
        const auto kind = e.at("kind").get<std::string>();
        if (kind == "param")
            c.params.push_back({e.at("name").get<std::string>(), std::move(t)});
        else if (kind == "adam_m")
            c.adam_m.push_back(std::move(t));
        else if (kind == "adam_v")
            c.adam_v.push_back(std::move(t));
        else
            throw DataError(path.string() + ": unknown tensor kind " + kind);
    }
    return c;
}

Checkpoint capture_state(const train::TrainState& state, const std::string& config_hash) {
    Checkpoint c;
    c.config_hash = config_hash;
    c.epoch = state.epoch;
    c.step = state.step;
    std::ostringstream rs;
    rs << state.rng;
    c.rng_state = rs.str();
    c.order = state.order;
    c.cursor = state.cursor;
    for (const auto& p : state.model.parameters()) c.params.push_back({p.name, p.var.value()});
    c.adam_m = state.adam.m;
    c.adam_v = state.adam.v;
    c.adam_steps = state.adam.steps;
    return c;
}

void load_weights(nn::M2DiffModel& model, const Checkpoint& ckpt) {
    auto params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw ConfigError("checkpoint has " + std::to_string(ckpt.params.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != ckpt.params[i].name || params[i].var.shape() != ckpt.params[i].value.shape())
            throw ConfigError("checkpoint tensor '" + ckpt.params[i].name + "' " +
                              shape_str(ckpt.params[i].value.shape()) + " does not match model parameter '" +
                              params[i].name + "' " + shape_str(params[i].var.shape()));
        params[i].var.mutable_value() = ckpt.params[i].value;
    }
}

void restore_state(train::TrainState& state, const Checkpoint& ckpt, const std::string& expected_hash,
                   bool allow_mismatch) {
    if (ckpt.config_hash != expected_hash && !allow_mismatch)
        throw ConfigError("checkpoint config hash " + ckpt.config_hash + " does not match " + expected_hash +
                          " (pass the override flag to load anyway)");
    load_weights(state.model, ckpt);
    state.adam.m = ckpt.adam_m;
    state.adam.v = ckpt.adam_v;
    state.adam.steps = ckpt.adam_steps;
    state.epoch = ckpt.epoch;
    state.step = ckpt.step;
    state.order = ckpt.order;
    state.cursor = ckpt.cursor;
    std::istringstream rs(ckpt.rng_state);
    rs >> state.rng;
    if (!rs) throw DataError("checkpoint RNG state is unreadable");
}

}  // namespace petdiff::io
