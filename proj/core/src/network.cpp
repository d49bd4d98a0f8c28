// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "petdiff/network.hpp"

#include <cmath>
#include <stdexcept>

namespace petdiff::nn {

namespace {

int norm_groups(int channels) {
    int g = std::min(8, channels);
    while (channels % g) --g;
    return g;
}

int attention_heads(int channels) { return (channels >= 64 && channels % 32 == 0) ? channels / 32 : 1; }

Var uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = u(rng);
    return Var(std::move(t), true);
}

void check_image_batch(const Var& v, std::int64_t n, int size, const char* what) {
    const Shape expected{n, 1, size, size};
    if (!v.defined() || v.shape() != expected)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                                    (v.defined() ? shape_str(v.shape()) : std::string("<absent>")));
}

class ParamCollector {
public:
    std::vector<NamedParameter> out;

    void add(const std::string& name, const Var& v, ParameterGroup g) {
        if (v.defined()) out.push_back({name, v, g});
    }
    void conv(const std::string& p, const Conv2d& c, ParameterGroup g) {
        add(p + ".weight", c.weight, g);
        add(p + ".bias", c.bias, g);
    }
    void linear(const std::string& p, const Linear& l, ParameterGroup g) {
        add(p + ".weight", l.weight, g);
        add(p + ".bias", l.bias, g);
    }
    void norm(const std::string& p, const GroupNorm& n, ParameterGroup g) {
        add(p + ".gamma", n.gamma, g);
        add(p + ".beta", n.beta, g);
    }
    void res(const std::string& p, const ResBlock& r, ParameterGroup g) {
        norm(p + ".norm1", r.norm1, g);
        conv(p + ".conv1", r.conv1, g);
        linear(p + ".emb", r.emb, g);
        norm(p + ".norm2", r.norm2, g);
        conv(p + ".conv2", r.conv2, g);
        if (r.skip) conv(p + ".skip", *r.skip, g);
    }
    void attn(const std::string& p, const AttentionBlock& a, ParameterGroup g) {
        norm(p + ".norm", a.norm, g);
        conv(p + ".qkv", a.qkv, g);
        conv(p + ".proj", a.proj, g);
    }
    void encoder(const std::string& p, const Encoder& e, ParameterGroup g) {
        conv(p + ".stem", e.stem, g);
        for (std::size_t l = 0; l < e.blocks.size(); ++l) {
            const std::string lp = p + ".level" + std::to_string(l + 1);
            for (std::size_t b = 0; b < e.blocks[l].size(); ++b) res(lp + ".block" + std::to_string(b), e.blocks[l][b], g);
            if (e.attention[l]) attn(lp + ".attn", *e.attention[l], g);
        }
        res(p + ".mid1", e.mid1, g);
        attn(p + ".mid_attn", e.mid_attn, g);
        res(p + ".mid2", e.mid2, g);
    }
    void decoder(const std::string& p, const Decoder& d, ParameterGroup g) {
        for (std::size_t i = d.blocks.size(); i-- > 0;) {
            const std::string lp = p + ".level" + std::to_string(i + 1);
            for (std::size_t b = 0; b < d.blocks[i].size(); ++b) res(lp + ".block" + std::to_string(b), d.blocks[i][b], g);
            if (d.attention[i]) attn(lp + ".attn", *d.attention[i], g);
            if (d.upsample[i]) conv(lp + ".upsample", *d.upsample[i], g);
        }
        norm(p + ".out_norm", d.out_norm, g);
        conv(p + ".out_conv", d.out_conv, g);
    }
};

}  // namespace

std::string_view to_string(Branch b) { return b == Branch::pet ? "pet" : "mri"; }

std::string_view to_string(ParameterGroup g) {
    switch (g) {
        case ParameterGroup::encoder_pet: return "encoder_pet";
        case ParameterGroup::encoder_mri: return "encoder_mri";
        case ParameterGroup::decoder_pet: return "decoder_pet";
        case ParameterGroup::decoder_mri: return "decoder_mri";
        case ParameterGroup::fusion: return "fusion";
        case ParameterGroup::time_embedding: return "time_embedding";
    }
    return "unknown";
}

int ModelConfig::level_channels(int level) const {
    return base_channels * channel_multipliers.at(static_cast<std::size_t>(level - 1));
}

int ModelConfig::fused_width(int level) const {
    if (fused_width_per_level.empty()) return level_channels(level);
    return fused_width_per_level.at(static_cast<std::size_t>(level - 1));
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (base_channels <= 0 || base_channels % 2) fail("base_channels must be a positive even integer");
    if (channel_multipliers.empty()) fail("channel_multipliers must be non-empty");
    for (int m : channel_multipliers)
        if (m <= 0) fail("channel_multipliers must be positive");
    if (num_res_blocks <= 0) fail("num_res_blocks must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(mri_decoder_dropout >= 0.0 && mri_decoder_dropout < 1.0)) fail("mri_decoder_dropout must lie in [0, 1)");
    if (input_size <= 0) fail("input_size must be positive");
    const int L = levels();
    if (input_size % (1 << (L - 1))) fail("input_size must be divisible by 2^(L-1)");
    for (int a : attention_levels)
        if (a < 1 || a > L) fail("attention level " + std::to_string(a) + " outside [1, L]");
    if (!fused_width_per_level.empty()) {
        if (static_cast<int>(fused_width_per_level.size()) != L) fail("fused_width_per_level needs one entry per level");
        for (int w : fused_width_per_level)
            if (w <= 0) fail("fused widths must be positive");
    }
    if (hff_enabled && !task2_enabled) fail("hff requires task2 (two encoders)");
    if (shared_single_decoder && !task2_enabled) fail("shared_single decoder requires task2");
    if (shared_single_decoder && !hff_enabled) fail("shared_single decoder requires hff");
    if (asymmetric_dropout && !dual_decoders()) fail("asymmetric_dropout requires two decoders");
    if (single_task_uses_mri && task2_enabled) fail("single_task_uses_mri only applies when task2 is disabled");
}

Tensor time_embed(double t, int dim, double max_period) {
    if (dim <= 0 || dim % 2) throw std::invalid_argument("time embedding dimension must be positive and even");
    if (t < 0) throw std::invalid_argument("timestep must be non-negative");
    const int half = dim / 2;
    Tensor out(Shape{dim});
    for (int k = 0; k < half; ++k) {
        const double w = std::exp(-std::log(max_period) * k / half);
        out[k] = std::sin(t * w);
        out[half + k] = std::cos(t * w);
    }
    return out;
}

Conv2d::Conv2d(int in, int out, int kernel, std::mt19937_64& rng, bool with_bias) : pad(kernel / 2) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
    weight = uniform_param({out, in, kernel, kernel}, bound, rng);
    if (with_bias) bias = uniform_param({out}, bound, rng);
}

Linear::Linear(int in, int out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_param({out, in}, bound, rng);
    bias = uniform_param({out}, bound, rng);
}

GroupNorm::GroupNorm(int channels)
    : gamma(Tensor({channels}, 1.0), true), beta(Tensor({channels}, 0.0), true), groups(norm_groups(channels)) {}

ResBlock::ResBlock(int in, int out, int emb_dim, std::mt19937_64& rng)
    : norm1(in), norm2(out), conv1(in, out, 3, rng), conv2(out, out, 3, rng), emb(emb_dim, 2 * out, rng) {
    if (in != out) skip.emplace(in, out, 1, rng);
}

Var ResBlock::forward(const Var& x, const Var& emb_act, double dropout, const ForwardOptions& opt) const {
    Var h = conv1(ag::silu(norm1(x)));
    // Affine time modulation: the first half of the projection scales, the second shifts.
    const Var mod = emb(emb_act);
    const std::int64_t out = norm2.gamma.value().size();
    const std::int64_t n = mod.shape()[0];
    Var mod4 = ag::make_result(mod.value().reshaped({n, 2 * out, 1, 1}), {mod}, [mod](ag::Node& self) {
        mod.node()->accumulate(self.grad.reshaped(mod.shape()));
    });
    Var sc = ag::slice_channels(mod4, 0, out);
    Var sh = ag::slice_channels(mod4, out, 2 * out);
    auto flat = [n, out](const Var& v) {
        return ag::make_result(v.value().reshaped({n, out}), {v},
                               [v](ag::Node& self) { v.node()->accumulate(self.grad.reshaped(v.shape())); });
    };
    h = ag::film(norm2(h), flat(sc), flat(sh));
    h = ag::silu(h);
    if (opt.train && dropout > 0.0) {
        if (!opt.rng) throw std::logic_error("training forward with dropout needs an rng");
        h = ag::dropout(h, dropout, *opt.rng);
    }
    h = conv2(h);
    return ag::add(skip ? (*skip)(x) : x, h);
}

AttentionBlock::AttentionBlock(int channels, std::mt19937_64& rng)
    : norm(channels), qkv(channels, 3 * channels, 1, rng), proj(channels, channels, 1, rng),
      heads(attention_heads(channels)) {}

Var AttentionBlock::forward(const Var& x) const {
    return ag::add(x, proj(ag::spatial_attention(qkv(norm(x)), heads)));
}

Encoder M2DiffModel::make_encoder(int in_channels, std::mt19937_64& rng) const {
    const auto& c = config_;
    const int L = c.levels(), E = c.time_embed_dim();
    Encoder e;
    e.stem = Conv2d(in_channels, c.level_channels(1), 3, rng);
    int ch = c.level_channels(1);
    for (int l = 1; l <= L; ++l) {
        std::vector<ResBlock> blocks;
        for (int b = 0; b < c.num_res_blocks; ++b) {
            blocks.emplace_back(ch, c.level_channels(l), E, rng);
            ch = c.level_channels(l);
        }
        e.blocks.push_back(std::move(blocks));
        e.attention.push_back(c.attention_levels.count(l) ? std::optional<AttentionBlock>(AttentionBlock(ch, rng))
                                                          : std::nullopt);
    }
    e.mid1 = ResBlock(ch, ch, E, rng);
    e.mid_attn = AttentionBlock(ch, rng);
    e.mid2 = ResBlock(ch, ch, E, rng);
    return e;
}

Decoder M2DiffModel::make_decoder(int bottleneck_channels, std::mt19937_64& rng, double dropout) const {
    const auto& c = config_;
    const int L = c.levels(), E = c.time_embed_dim();
    Decoder d;
    d.dropout = dropout;
    d.blocks.resize(static_cast<std::size_t>(L));
    d.attention.resize(static_cast<std::size_t>(L));
    d.upsample.resize(static_cast<std::size_t>(L));
    int in = bottleneck_channels;
    for (int l = L; l >= 1; --l) {
        const auto i = static_cast<std::size_t>(l - 1);
        const int ch = c.level_channels(l);
        const int skip = c.hff_enabled ? c.fused_width(l) : ch;
        int cur = in + skip;
        for (int b = 0; b < c.num_res_blocks; ++b) {
            d.blocks[i].emplace_back(cur, ch, E, rng);
            cur = ch;
        }
        if (c.attention_levels.count(l)) d.attention[i].emplace(ch, rng);
        if (l > 1) {
            d.upsample[i].emplace(ch, c.level_channels(l - 1), 3, rng);
            in = c.level_channels(l - 1);
        }
    }
    d.out_norm = GroupNorm(c.level_channels(1));
    d.out_conv = Conv2d(c.level_channels(1), 2, 3, rng);
    return d;
}

M2DiffModel::M2DiffModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& c = config_;
    const int L = c.levels();
    temb1_ = Linear(c.base_channels, c.time_embed_dim(), rng);
    temb2_ = Linear(c.time_embed_dim(), c.time_embed_dim(), rng);

    const int pet_in = 2 + (c.single_task_uses_mri ? 1 : 0);
    enc_pet_ = make_encoder(pet_in, rng);
    if (c.task2_enabled) enc_mri_ = make_encoder(2, rng);

    const int bottleneck = c.level_channels(L) * (c.shared_single_decoder ? 2 : 1);
    dec_pet_ = make_decoder(bottleneck, rng, c.dropout);
    if (c.dual_decoders()) dec_mri_ = make_decoder(bottleneck, rng, c.asymmetric_dropout ? c.mri_decoder_dropout : c.dropout);

    if (c.hff_enabled) {
        FusionHead h;
        for (int l = 1; l <= L; ++l) {
            const int ch = c.level_channels(l), fw = c.fused_width(l);
            h.project_pet.emplace_back(ch, ch, 1, rng);
            h.project_mri.emplace_back(ch, ch, 1, rng);
            h.fuse_conv.emplace_back(2 * ch, fw, 3, rng);
            h.fuse_norm.emplace_back(fw);
            h.pet_only_conv.emplace_back(ch, fw, 3, rng);
            h.pet_only_norm.emplace_back(fw);
        }
        hff_ = std::move(h);
    }
}

const Encoder& M2DiffModel::encoder(Branch b) const {
    if (b == Branch::pet) return enc_pet_;
    if (!enc_mri_) throw std::logic_error("model has no MRI encoder");
    return *enc_mri_;
}

const Decoder& M2DiffModel::decoder(Branch b) const {
    if (b == Branch::pet) return dec_pet_;
    if (!dec_mri_) throw std::logic_error("model has no MRI decoder");
    return *dec_mri_;
}

Var M2DiffModel::embed_time(const std::vector<int>& t) const {
    const int D = config_.base_channels;
    Tensor e({static_cast<std::int64_t>(t.size()), D});
    for (std::size_t i = 0; i < t.size(); ++i) {
        const Tensor row = time_embed(t[i], D);
        std::copy(row.data(), row.data() + D, e.data() + static_cast<std::int64_t>(i) * D);
    }
    return temb2_(ag::silu(temb1_(Var(std::move(e)))));
}

FeaturePyramid M2DiffModel::encode(Branch branch, const Var& cond, const Var& y_t, const Var& temb,
                                   const ForwardOptions& opt) const {
    const Encoder& e = encoder(branch);
    const auto& c = config_;
    if (!cond.defined() || !y_t.defined()) throw std::invalid_argument("encode: missing input");
    if (cond.shape().size() != 4 || y_t.shape().size() != 4 || cond.shape()[0] != y_t.shape()[0] ||
        cond.shape()[2] != c.input_size || cond.shape()[3] != c.input_size || y_t.shape()[2] != c.input_size ||
        y_t.shape()[3] != c.input_size)
        throw std::invalid_argument("encode: spatial shape mismatch (" + shape_str(cond.shape()) + " / " +
                                    shape_str(y_t.shape()) + ", input_size " + std::to_string(c.input_size) + ")");
    if (e.stem.weight.shape()[1] != 1 + cond.shape()[1])
        throw std::invalid_argument("encode: conditioning channel count mismatch");

    const std::string prefix = std::string(to_string(branch)) + "/enc.";
    const Var emb_act = ag::silu(temb);
    FeaturePyramid pyr;
    Var h = e.stem(ag::concat_channels({y_t, cond}));
    const int L = c.levels();
    for (int l = 1; l <= L; ++l) {
        const auto i = static_cast<std::size_t>(l - 1);
        for (const auto& b : e.blocks[i]) h = b.forward(h, emb_act, c.dropout, opt);
        if (e.attention[i]) h = e.attention[i]->forward(h);
        pyr.levels.push_back(h);
        if (opt.capture) (*opt.capture)[prefix + std::to_string(l)] = h.value();
        if (l < L) h = ag::avg_pool2(h);
    }
    h = e.mid1.forward(h, emb_act, c.dropout, opt);
    h = e.mid_attn.forward(h);
    h = e.mid2.forward(h, emb_act, c.dropout, opt);
    pyr.bottleneck = h;
    if (opt.capture) (*opt.capture)[prefix + "bottleneck"] = h.value();
    return pyr;
}

FusionPyramid M2DiffModel::hff_fuse(const FeaturePyramid& pet, const FeaturePyramid& mri) const {
    if (!hff_) throw std::logic_error("hierarchical fusion is disabled in this model");
    const int L = config_.levels();
    if (static_cast<int>(pet.levels.size()) != L || static_cast<int>(mri.levels.size()) != L)
        throw std::invalid_argument("hff_fuse: pyramid level count mismatch");
    FusionPyramid out;
    for (int l = 0; l < L; ++l) {
        const auto i = static_cast<std::size_t>(l);
        const Shape& a = pet.levels[i].shape();
        const Shape& b = mri.levels[i].shape();
        if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3])
            throw std::invalid_argument("hff_fuse: level " + std::to_string(l + 1) + " spatial mismatch " +
                                        shape_str(a) + " vs " + shape_str(b));
        Var cat = ag::concat_channels({hff_->project_pet[i](pet.levels[i]), hff_->project_mri[i](mri.levels[i])});
        out.levels.push_back(ag::silu(hff_->fuse_norm[i](hff_->fuse_conv[i](cat))));
    }
    return out;
}

FusionPyramid M2DiffModel::pet_only_fuse(const FeaturePyramid& pet) const {
    if (!hff_) throw std::logic_error("hierarchical fusion is disabled in this model");
    FusionPyramid out;
    for (std::size_t i = 0; i < pet.levels.size(); ++i)
        out.levels.push_back(
            ag::silu(hff_->pet_only_norm[i](hff_->pet_only_conv[i](hff_->project_pet[i](pet.levels[i])))));
    return out;
}

std::pair<Var, Var> M2DiffModel::decode(Branch branch, const Var& bottleneck, const std::vector<Var>& skips,
                                        const Var& temb, const ForwardOptions& opt) const {
    const Decoder& d = decoder(branch);
    const auto& c = config_;
    const int L = c.levels();
    if (static_cast<int>(skips.size()) != L)
        throw std::invalid_argument("decode: expected " + std::to_string(L) + " skip levels, got " +
                                    std::to_string(skips.size()));
    const std::string prefix = std::string(to_string(branch)) + "/dec.";
    const Var emb_act = ag::silu(temb);
    Var h = bottleneck;
    for (int l = L; l >= 1; --l) {
        const auto i = static_cast<std::size_t>(l - 1);
        const Shape& hs = h.shape();
        const Shape& ss = skips[i].shape();
        if (hs.size() != 4 || ss.size() != 4 || hs[0] != ss[0] || hs[2] != ss[2] || hs[3] != ss[3])
            throw std::invalid_argument("decode: skip level " + std::to_string(l) + " shape " + shape_str(ss) +
                                        " incompatible with decoder stage " + shape_str(hs));
        h = ag::concat_channels({h, skips[i]});
        for (const auto& b : d.blocks[i]) h = b.forward(h, emb_act, d.dropout, opt);
        if (d.attention[i]) h = d.attention[i]->forward(h);
        if (opt.capture) (*opt.capture)[prefix + std::to_string(l)] = h.value();
        if (d.upsample[i]) h = (*d.upsample[i])(ag::upsample_nearest2(h));
    }
    Var out = d.out_conv(ag::silu(d.out_norm(h)));
    Var y0 = ag::slice_channels(out, 0, 1);
    Var v = ag::slice_channels(out, 1, 2);
    if (opt.capture) (*opt.capture)[prefix + "out"] = y0.value();
    return {y0, v};
}

PredictionPair M2DiffModel::forward(const Var& y_t, const Var& x_ld, const Var& z_mri, const std::vector<int>& t,
                                    bool mri_active, const ForwardOptions& opt) const {
    const auto& c = config_;
    if (!y_t.defined()) throw std::invalid_argument("forward: y_t missing");
    const std::int64_t N = y_t.shape().empty() ? 0 : y_t.shape()[0];
    check_image_batch(y_t, N, c.input_size, "forward y_t");
    check_image_batch(x_ld, N, c.input_size, "forward x_ld");
    if (static_cast<std::int64_t>(t.size()) != N) throw std::invalid_argument("forward: one timestep per item required");
    if (y_t.value().any_nan() || x_ld.value().any_nan()) throw std::invalid_argument("forward: NaN in PET inputs");
    const bool uses_mri = c.task2_enabled || c.single_task_uses_mri;
    if (mri_active && uses_mri) {
        if (!z_mri.defined()) throw std::invalid_argument("forward: mri_active is set but the MRI slice is absent");
        check_image_batch(z_mri, N, c.input_size, "forward z_mri");
        if (z_mri.value().any_nan()) throw std::invalid_argument("forward: NaN in MRI input");
    }

    const Var temb = embed_time(t);
    PredictionPair pair;
    pair.mri_active = mri_active;

    if (!c.task2_enabled) {
        Var cond = x_ld;
        if (c.single_task_uses_mri)
            cond = ag::concat_channels({x_ld, mri_active ? z_mri : Var(Tensor(x_ld.shape()))});
        const FeaturePyramid p = encode(Branch::pet, cond, y_t, temb, opt);
        std::tie(pair.y0_hat_pet, pair.v_pet) = decode(Branch::pet, p.bottleneck, p.levels, temb, opt);
        return pair;
    }

    const FeaturePyramid pp = encode(Branch::pet, x_ld, y_t, temb, opt);
    if (!mri_active) {
        const std::vector<Var> skips = c.hff_enabled ? pet_only_fuse(pp).levels : pp.levels;
        Var bottleneck = pp.bottleneck;
        if (c.shared_single_decoder)
            bottleneck = ag::concat_channels({pp.bottleneck, Var(Tensor(pp.bottleneck.shape()))});
        std::tie(pair.y0_hat_pet, pair.v_pet) = decode(Branch::pet, bottleneck, skips, temb, opt);
        return pair;
    }

    const FeaturePyramid pm = encode(Branch::mri, z_mri, y_t, temb, opt);
    if (c.hff_enabled) {
        const FusionPyramid fused = hff_fuse(pp, pm);
        if (c.shared_single_decoder) {
            std::tie(pair.y0_hat_pet, pair.v_pet) =
                decode(Branch::pet, ag::concat_channels({pp.bottleneck, pm.bottleneck}), fused.levels, temb, opt);
            return pair;
        }
        std::tie(pair.y0_hat_pet, pair.v_pet) = decode(Branch::pet, pp.bottleneck, fused.levels, temb, opt);
        std::tie(pair.y0_hat_mri, pair.v_mri) = decode(Branch::mri, pm.bottleneck, fused.levels, temb, opt);
        return pair;
    }
    std::tie(pair.y0_hat_pet, pair.v_pet) = decode(Branch::pet, pp.bottleneck, pp.levels, temb, opt);
    std::tie(pair.y0_hat_mri, pair.v_mri) = decode(Branch::mri, pm.bottleneck, pm.levels, temb, opt);
    return pair;
}

std::vector<NamedParameter> M2DiffModel::parameters() const {
    ParamCollector pc;
    pc.linear("temb.fc1", temb1_, ParameterGroup::time_embedding);
    pc.linear("temb.fc2", temb2_, ParameterGroup::time_embedding);
    pc.encoder("enc_pet", enc_pet_, ParameterGroup::encoder_pet);
    if (enc_mri_) pc.encoder("enc_mri", *enc_mri_, ParameterGroup::encoder_mri);
    pc.decoder("dec_pet", dec_pet_, ParameterGroup::decoder_pet);
    if (dec_mri_) pc.decoder("dec_mri", *dec_mri_, ParameterGroup::decoder_mri);
    if (hff_) {
        for (std::size_t i = 0; i < hff_->project_pet.size(); ++i) {
            const std::string p = "hff.level" + std::to_string(i + 1);
            pc.conv(p + ".project_pet", hff_->project_pet[i], ParameterGroup::fusion);
            pc.conv(p + ".project_mri", hff_->project_mri[i], ParameterGroup::fusion);
            pc.conv(p + ".fuse_conv", hff_->fuse_conv[i], ParameterGroup::fusion);
            pc.norm(p + ".fuse_norm", hff_->fuse_norm[i], ParameterGroup::fusion);
            pc.conv(p + ".pet_only_conv", hff_->pet_only_conv[i], ParameterGroup::fusion);
            pc.norm(p + ".pet_only_norm", hff_->pet_only_norm[i], ParameterGroup::fusion);
        }
    }
    return std::move(pc.out);
}

std::int64_t M2DiffModel::parameter_count(ParameterGroup g) const {
    std::int64_t n = 0;
    for (const auto& p : parameters())
        if (p.group == g) n += p.var.value().size();
    return n;
}

std::int64_t M2DiffModel::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p.var.value().size();
    return n;
}

void M2DiffModel::zero_grad() {
    for (auto& p : parameters()) p.var.zero_grad();
}

Tensor stack_images(const std::vector<Tensor>& images) {
    if (images.empty()) throw std::invalid_argument("stack_images: empty list");
    const Shape& s = images.front().shape();
    if (s.size() != 2) throw std::invalid_argument("stack_images: images must be (H, W)");
    const std::int64_t n = static_cast<std::int64_t>(images.size()), P = s[0] * s[1];
    Tensor out({n, 1, s[0], s[1]});
    for (std::int64_t i = 0; i < n; ++i) {
        const Tensor& img = images[static_cast<std::size_t>(i)];
        if (img.shape() != s) throw std::invalid_argument("stack_images: heterogeneous shapes");
        std::copy(img.data(), img.data() + P, out.data() + i * P);
    }
    return out;
}

Tensor unstack_image(const Tensor& batch, std::int64_t n) {
    if (batch.rank() != 4 || batch.dim(1) != 1) throw std::invalid_argument("unstack_image: expected (N, 1, H, W)");
    const std::int64_t H = batch.dim(2), W = batch.dim(3);
    Tensor out({H, W});
    std::copy(batch.data() + n * H * W, batch.data() + (n + 1) * H * W, out.data());
    return out;
}

}  // namespace petdiff::nn
