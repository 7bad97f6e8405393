#pragma once

#include <string>
#include <vector>

#include "lvd/audio.hpp"
#include "lvd/nn.hpp"

namespace lvd {

// Reference desk-scale architecture: three resolution levels over 32x32,
// attention at the two lowest, two residual blocks per level.
struct DenoiserConfig {
    int64_t channels = 3;
    int64_t frames = 16;
    int64_t height = 32;
    int64_t width = 32;
    int64_t base_width = 32;
    std::vector<int64_t> channel_mult = {1, 2, 4};
    std::vector<int64_t> attn_levels = {1, 2};
    int64_t blocks_per_level = 2;
    int64_t embed_dim = 128;
    int64_t heads = 4;
    int64_t gn_groups = 8;
    int64_t temporal_kernel = 3;
    int64_t aug_dim = 5;
    bool zero_init_final = true;

    int depth() const { return static_cast<int>(channel_mult.size()); }
    bool level_has_attn(int64_t l) const {
        for (int64_t a : attn_levels)
            if (a == l) return true;
        return false;
    }
    void validate() const {
        int64_t div = int64_t{1} << (depth() - 1);
        if (height % div != 0 || width % div != 0)
            throw ShapeError(strcat_("height/width (", height, ",", width,
                                     ") must be divisible by ", div));
        if (embed_dim % 2 != 0) throw ShapeError("embed_dim must be even");
        for (int64_t m : channel_mult)
            if ((base_width * m) % gn_groups != 0)
                throw ShapeError("level widths must be divisible by gn_groups");
    }
};

// sinusoidal features of ln(sigma)/4 at geometric frequencies, [B, dim]
template <typename S>
Tensor<S> sigma_features(const std::vector<double>& sigmas, int64_t dim) {
    int64_t half = dim / 2;
    Tensor<S> out = Tensor<S>::zeros({static_cast<int64_t>(sigmas.size()), dim});
    for (size_t b = 0; b < sigmas.size(); b++) {
        double sg = sigmas[b];
        if (!(sg > 0.0)) throw NumericError(strcat_("sigma must be positive, got ", sg));
        double u = std::log(sg) / 4.0;
        for (int64_t i = 0; i < half; i++) {
            // geometric frequencies, smooth over the ln(sigma) range
            double freq = 0.5 * std::exp(static_cast<double>(i) /
                                         static_cast<double>(half - 1) * std::log(64.0));
            out.data()[static_cast<int64_t>(b) * dim + i] = static_cast<S>(std::sin(u * freq));
            out.data()[static_cast<int64_t>(b) * dim + half + i] =
                static_cast<S>(std::cos(u * freq));
        }
    }
    return out;
}

// h_{s+1} = GN(h_s) * (k + 1) + s, with per-sample per-channel (k, s)
template <typename S>
Tensor<S> apply_scale_shift(Tape<S>& tp, Tensor<S> h, Tensor<S> k, Tensor<S> s,
                            int64_t groups) {
    return scale_shift_mod(tp, group_norm(tp, h, groups), k, s);
}

template <typename S>
Tensor<S> apply_temporal(Tape<S>& tp, Tensor<S> h_folded, const TemporalConv<S>& tc,
                         int64_t b) {
    return fold_frames(tp, tc(tp, unfold_frames(tp, h_folded, b)));
}

// Residual block: GN+affine+SiLU+conv, then modulated GN (scale-shift from
// the conditioning embedding) + SiLU + conv, each conv followed by its
// temporal stage. Works on frame-folded tensors [B*F, C, H, W].
template <typename S>
struct ResBlock {
    int64_t cin = 0, cout = 0, groups = 8;
    Tensor<S> gamma1, beta1;
    Conv2dLayer<S> conv1;
    TemporalConv<S> tconv1;
    Linear<S> cond_proj;  // embed -> 2*cout, zero-init: neutral modulation at start
    Conv2dLayer<S> conv2;
    TemporalConv<S> tconv2;
    bool has_skip = false;
    Conv2dLayer<S> skip1x1;

    static ResBlock create(ParamStore<S>& ps, const std::string& prefix, int64_t cin,
                           int64_t cout, int64_t embed_dim, int64_t kt,
                           int64_t groups, Rng& rng) {
        if (cin % groups != 0 || cout % groups != 0)
            throw ShapeError(strcat_("resblock channels (", cin, "->", cout,
                                     ") not divisible by gn groups ", groups));
        ResBlock b;
        b.cin = cin;
        b.cout = cout;
        b.groups = groups;
        b.gamma1 = ps.add(prefix + ".g1", Tensor<S>::filled({cin}, S(1), true));
        b.beta1 = ps.add(prefix + ".b1", Tensor<S>::zeros({cin}, true));
        b.conv1 = Conv2dLayer<S>::create(ps, prefix + ".c1", cin, cout, 3, rng);
        b.tconv1 = TemporalConv<S>::create(ps, prefix + ".t1", cout, kt);
        b.cond_proj = Linear<S>::create(ps, prefix + ".cond", embed_dim, 2 * cout, rng,
                                        /*zero_init=*/true);
        b.conv2 = Conv2dLayer<S>::create(ps, prefix + ".c2", cout, cout, 3, rng);
        b.tconv2 = TemporalConv<S>::create(ps, prefix + ".t2", cout, kt);
        b.has_skip = cin != cout;
        if (b.has_skip)
            b.skip1x1 = Conv2dLayer<S>::create(ps, prefix + ".skip", cin, cout, 1, rng);
        return b;
    }

    Tensor<S> forward(Tape<S>& tp, Tensor<S> h, Tensor<S> cond_act, int64_t b) const {
        int64_t bf = h.dim(0);
        Tensor<S> a = group_norm(tp, h, groups);
        a = channel_affine(tp, a, gamma1, beta1);
        a = silu(tp, a);
        a = conv1(tp, a);
        a = apply_temporal(tp, a, tconv1, b);

        Tensor<S> ks = cond_proj(tp, cond_act).reshaped({bf, 2 * cout});
        Tensor<S> k = slice(tp, ks, 1, 0, cout);
        Tensor<S> s = slice(tp, ks, 1, cout, cout);
        Tensor<S> m = apply_scale_shift(tp, a, k, s, groups);
        m = silu(tp, m);
        m = conv2(tp, m);
        m = apply_temporal(tp, m, tconv2, b);

        Tensor<S> sk = has_skip ? skip1x1(tp, h) : h;
        return add(tp, sk, m);
    }
};

// Spatial self-attention within each frame, then temporal self-attention
// across frames at each location, residual around each stage.
template <typename S>
struct AttnBlock {
    int64_t channels = 0, groups = 8;
    SelfAttention<S> spatial, temporal;

    static AttnBlock create(ParamStore<S>& ps, const std::string& prefix, int64_t c,
                            int64_t spatial_tokens, int64_t max_frames,
                            int64_t heads, int64_t groups, Rng& rng) {
        AttnBlock a;
        a.channels = c;
        a.groups = groups;
        a.spatial = SelfAttention<S>::create(ps, prefix + ".sp", c, spatial_tokens,
                                             heads, rng);
        a.temporal = SelfAttention<S>::create(ps, prefix + ".tm", c, max_frames,
                                              heads, rng);
        return a;
    }

    Tensor<S> forward(Tape<S>& tp, Tensor<S> h, int64_t b) const {
        int64_t bf = h.dim(0), c = h.dim(1), hh = h.dim(2), ww = h.dim(3);
        int64_t f = bf / b;
        Tensor<S> xn = group_norm(tp, h, groups);
        Tensor<S> tok = permute(tp, xn, {0, 2, 3, 1}).reshaped({bf, hh * ww, c});
        Tensor<S> br = spatial.forward(tp, tok);
        br = permute(tp, br.reshaped({bf, hh, ww, c}), {0, 3, 1, 2});
        Tensor<S> h1 = add(tp, h, br);

        Tensor<S> xn2 = group_norm(tp, h1, groups);
        Tensor<S> tt =
            permute(tp, xn2.reshaped({b, f, c, hh, ww}), {0, 3, 4, 1, 2})
                .reshaped({b * hh * ww, f, c});
        Tensor<S> br2 = temporal.forward(tp, tt);
        Tensor<S> bb =
            permute(tp, br2.reshaped({b, hh, ww, f, c}), {0, 3, 4, 1, 2})
                .reshaped({bf, c, hh, ww});
        return add(tp, h1, bb);
    }
};

// Runtime conditioning for one batch. audio_mel holds the fixed featurizer
// output; the learnable projection lives in the model. cond_mask false
// selects the unconditional branch (null audio embedding, zero reference).
template <typename S>
struct ConditioningBundle {
    Tensor<S> ref;        // [B,C,H,W]
    Tensor<S> audio_mel;  // [B,F,feat_dim]
    Tensor<S> aug;        // [B,aug_dim]
    std::vector<uint8_t> cond_mask;
};

template <typename S>
class Denoiser {
   public:
    DenoiserConfig cfg;
    ParamStore<S> params;
    AudioEncoder<S> audio;
    Linear<S> sig_mlp1, sig_mlp2;
    Linear<S> aug_proj;
    Tensor<S> null_audio;
    Conv2dLayer<S> stem;

    struct Level {
        std::vector<ResBlock<S>> res;
        std::vector<AttnBlock<S>> attn;  // parallel to res when non-empty
    };
    std::vector<Level> down, up;
    ResBlock<S> mid1, mid2;
    AttnBlock<S> mid_attn;
    Tensor<S> out_gamma, out_beta;
    Conv2dLayer<S> out_conv;

    explicit Denoiser(const DenoiserConfig& config, uint64_t seed)
        : cfg(config) {
        cfg.validate();
        Rng rng(seed);
        int64_t e = cfg.embed_dim;
        audio = AudioEncoder<S>::create(params, "audio", e, rng);
        sig_mlp1 = Linear<S>::create(params, "sig.m1", e, e, rng);
        sig_mlp2 = Linear<S>::create(params, "sig.m2", e, e, rng);
        aug_proj = Linear<S>::create(params, "aug", cfg.aug_dim, e, rng, false, 0.2);
        null_audio = params.add("null_audio", Tensor<S>::randn({e}, rng, S(0.02), true));

        int L = cfg.depth();
        std::vector<int64_t> widths(static_cast<size_t>(L));
        for (int l = 0; l < L; l++)
            widths[static_cast<size_t>(l)] = cfg.base_width * cfg.channel_mult[static_cast<size_t>(l)];
        int64_t w0 = widths[0];
        stem = Conv2dLayer<S>::create(params, "stem", 2 * cfg.channels, w0, 3, rng);

        auto tokens_at = [&](int l) {
            return (cfg.height >> l) * (cfg.width >> l);
        };

        std::vector<int64_t> skip_w = {w0};
        int64_t cur = w0;
        down.resize(static_cast<size_t>(L));
        for (int l = 0; l < L; l++) {
            int64_t wl = widths[static_cast<size_t>(l)];
            for (int64_t b = 0; b < cfg.blocks_per_level; b++) {
                down[static_cast<size_t>(l)].res.push_back(ResBlock<S>::create(
                    params, strcat_("down.l", l, ".b", b), cur, wl, e,
                    cfg.temporal_kernel, cfg.gn_groups, rng));
                cur = wl;
                if (cfg.level_has_attn(l))
                    down[static_cast<size_t>(l)].attn.push_back(AttnBlock<S>::create(
                        params, strcat_("down.l", l, ".a", b), wl, tokens_at(l),
                        cfg.frames, cfg.heads, cfg.gn_groups, rng));
                skip_w.push_back(cur);
            }
            if (l < L - 1) skip_w.push_back(cur);  // after downsample
        }

        int mid_l = L - 1;
        mid1 = ResBlock<S>::create(params, "mid.r1", cur, cur, e, cfg.temporal_kernel,
                                   cfg.gn_groups, rng);
        mid_attn = AttnBlock<S>::create(params, "mid.a", cur, tokens_at(mid_l),
                                        cfg.frames, cfg.heads, cfg.gn_groups, rng);
        mid2 = ResBlock<S>::create(params, "mid.r2", cur, cur, e, cfg.temporal_kernel,
                                   cfg.gn_groups, rng);

        up.resize(static_cast<size_t>(L));
        for (int l = L - 1; l >= 0; l--) {
            int64_t wl = widths[static_cast<size_t>(l)];
            for (int64_t b = 0; b < cfg.blocks_per_level + 1; b++) {
                int64_t sw = skip_w.back();
                skip_w.pop_back();
                up[static_cast<size_t>(l)].res.push_back(ResBlock<S>::create(
                    params, strcat_("up.l", l, ".b", b), cur + sw, wl, e,
                    cfg.temporal_kernel, cfg.gn_groups, rng));
                cur = wl;
                if (cfg.level_has_attn(l))
                    up[static_cast<size_t>(l)].attn.push_back(AttnBlock<S>::create(
                        params, strcat_("up.l", l, ".a", b), wl, tokens_at(l),
                        cfg.frames, cfg.heads, cfg.gn_groups, rng));
            }
        }

        out_gamma = params.add("out.g", Tensor<S>::filled({w0}, S(1), true));
        out_beta = params.add("out.b", Tensor<S>::zeros({w0}, true));
        out_conv = Conv2dLayer<S>::create(params, "out.conv", w0, cfg.channels, 3, rng,
                                          cfg.zero_init_final);
    }

    // two-layer projection of the sinusoidal noise-level features, [B,E]
    Tensor<S> sigma_embed(Tape<S>& tp, const std::vector<double>& sigmas) const {
        Tensor<S> f = sigma_features<S>(sigmas, cfg.embed_dim);
        return sig_mlp2(tp, silu(tp, sig_mlp1(tp, f)));
    }

    // per-frame conditioning embedding, already activated, [B,F,E]
    Tensor<S> embed_conditioning(Tape<S>& tp, const ConditioningBundle<S>& cond,
                                 const std::vector<double>& sigmas) const {
        Tensor<S> aud = audio.encode(tp, cond.audio_mel);  // [B,F,E]
        std::vector<uint8_t> replace(cond.cond_mask.size());
        for (size_t i = 0; i < replace.size(); i++) replace[i] = !cond.cond_mask[i];
        aud = replace_masked_rows(tp, aud, null_audio, replace);
        Tensor<S> cvec = sigma_embed(tp, sigmas);
        if (cond.aug.defined()) cvec = add(tp, cvec, aug_proj(tp, cond.aug));
        return silu(tp, add_per_sample(tp, aud, cvec));
    }

    // x_t [B,C,F,H,W] with the repeated reference concatenated channel-wise,
    // U-Net trunk with skip connections, modulated per block. Output keeps
    // the input shape.
    Tensor<S> forward(Tape<S>& tp, Tensor<S> x, const ConditioningBundle<S>& cond,
                      const std::vector<double>& sigmas) const {
        int64_t b = x.dim(0), c = x.dim(1), f = x.dim(2), hh = x.dim(3), ww = x.dim(4);
        if (c != cfg.channels || hh != cfg.height || ww != cfg.width)
            throw ShapeError(strcat_("denoiser: input ", shape_str(x.shape()),
                                     " does not match the configured geometry"));
        if (f > cfg.frames)
            throw ShapeError(strcat_("denoiser: ", f, " frames exceed configured ",
                                     cfg.frames));
        if (static_cast<int64_t>(sigmas.size()) != b ||
            static_cast<int64_t>(cond.cond_mask.size()) != b)
            throw ShapeError("denoiser: sigma/mask batch mismatch");

        Tensor<S> e = embed_conditioning(tp, cond, sigmas);

        std::vector<uint8_t> zero_ref(cond.cond_mask.size());
        for (size_t i = 0; i < zero_ref.size(); i++) zero_ref[i] = !cond.cond_mask[i];
        Tensor<S> ref = zero_masked_samples(tp, cond.ref, zero_ref);
        Tensor<S> xin = concat<S>(tp, {x, repeat_frames(tp, ref, f)}, 1);

        Tensor<S> h = fold_frames(tp, xin);
        h = stem(tp, h);
        std::vector<Tensor<S>> skips = {h};
        int L = cfg.depth();
        for (int l = 0; l < L; l++) {
            const Level& lv = down[static_cast<size_t>(l)];
            for (size_t bi = 0; bi < lv.res.size(); bi++) {
                h = lv.res[bi].forward(tp, h, e, b);
                if (!lv.attn.empty()) h = lv.attn[bi].forward(tp, h, b);
                skips.push_back(h);
            }
            if (l < L - 1) {
                h = avg_pool2d(tp, h);
                skips.push_back(h);
            }
        }

        h = mid1.forward(tp, h, e, b);
        h = mid_attn.forward(tp, h, b);
        h = mid2.forward(tp, h, e, b);

        for (int l = L - 1; l >= 0; l--) {
            const Level& lv = up[static_cast<size_t>(l)];
            for (size_t bi = 0; bi < lv.res.size(); bi++) {
                Tensor<S> sk = skips.back();
                skips.pop_back();
                h = lv.res[bi].forward(tp, concat<S>(tp, {h, sk}, 1), e, b);
                if (!lv.attn.empty()) h = lv.attn[bi].forward(tp, h, b);
            }
            if (l > 0) h = upsample_nearest2x(tp, h);
        }

        h = group_norm(tp, h, cfg.gn_groups);
        h = channel_affine(tp, h, out_gamma, out_beta);
        h = silu(tp, h);
        h = out_conv(tp, h);
        return unfold_frames(tp, h, b);
    }
};

}  // namespace lvd
