#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lvd/unet.hpp"

using namespace lvd;
using FT = Tensor<float>;
using DT = Tensor<double>;

namespace {

DenoiserConfig tiny_config() {
    DenoiserConfig cfg;
    cfg.channels = 1;
    cfg.frames = 4;
    cfg.height = 16;
    cfg.width = 16;
    cfg.base_width = 8;
    cfg.channel_mult = {1, 2};
    cfg.attn_levels = {1};
    cfg.blocks_per_level = 1;
    cfg.embed_dim = 16;
    cfg.heads = 2;
    cfg.gn_groups = 4;
    return cfg;
}

template <typename S>
ConditioningBundle<S> tiny_cond(const DenoiserConfig& cfg, int64_t b, Rng& rng,
                                bool conditioned = true) {
    MelSpec spec;
    ConditioningBundle<S> cond;
    cond.ref = Tensor<S>::randn({b, cfg.channels, cfg.height, cfg.width}, rng, S(0.5));
    cond.audio_mel = Tensor<S>::randn({b, cfg.frames, spec.feat_dim()}, rng, S(0.5));
    cond.aug = Tensor<S>::zeros({b, cfg.aug_dim});
    cond.cond_mask.assign(static_cast<size_t>(b), conditioned ? 1 : 0);
    return cond;
}

}  // namespace

TEST_CASE("pseudo3d conv: delta temporal kernel equals the 2D-only path") {
    Rng rng(3);
    ParamStore<float> ps;
    auto block = Pseudo3dConv<float>::create(ps, "p3d", 4, 4, 3, 3, rng);
    Tape<float> tp;
    FT x = FT::randn({2, 4, 5, 8, 8}, rng);
    FT with_t = block.forward(tp, x);
    FT without_t = block.forward(tp, x, /*skip_temporal=*/true);
    for (int64_t i = 0; i < with_t.numel(); i++)
        CHECK(with_t.data()[i] == without_t.data()[i]);
}

TEST_CASE("pseudo3d conv: single frame reduces to the center tap") {
    Rng rng(4);
    ParamStore<float> ps;
    auto block = Pseudo3dConv<float>::create(ps, "p3d", 3, 3, 3, 5, rng);
    // randomize the temporal kernel away from the delta init
    for (int64_t i = 0; i < block.temporal.w.numel(); i++)
        block.temporal.w.data()[i] = static_cast<float>(rng.normal() * 0.3);
    Tape<float> tp;
    FT x = FT::randn({1, 3, 1, 6, 6}, rng);
    FT got = block.forward(tp, x);
    // center-tap-only reference: spatial stage, then mix channels with w[:,:,kt/2]
    FT sp = block.forward(tp, x, /*skip_temporal=*/true);  // includes residual
    // remove residual to isolate the spatial output, apply tap, re-add
    Tape<float> tq;
    FT sp_nores = sub(tq, sp, x);
    FT ref = FT::zeros(x.shape());
    int64_t hw = 36, kt = 5;
    for (int64_t co = 0; co < 3; co++)
        for (int64_t i = 0; i < hw; i++) {
            float acc = 0;
            for (int64_t ci = 0; ci < 3; ci++)
                acc += sp_nores.data()[ci * hw + i] *
                       block.temporal.w.data()[(co * 3 + ci) * kt + kt / 2];
            ref.data()[co * hw + i] = acc + x.data()[co * hw + i];
        }
    for (int64_t i = 0; i < got.numel(); i++)
        CHECK(got.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-5));
}

TEST_CASE("pseudo3d conv: 2D stage commutes with frame permutation") {
    Rng rng(5);
    ParamStore<float> ps;
    auto block = Pseudo3dConv<float>::create(ps, "p3d", 2, 2, 3, 3, rng);
    Tape<float> tp;
    FT x = FT::randn({1, 2, 4, 6, 6}, rng);
    // reversed frame order
    FT xr = FT::zeros(x.shape());
    int64_t fhw = 4 * 36;
    for (int64_t c = 0; c < 2; c++)
        for (int64_t f = 0; f < 4; f++)
            for (int64_t i = 0; i < 36; i++)
                xr.data()[c * fhw + f * 36 + i] = x.data()[c * fhw + (3 - f) * 36 + i];
    FT y = block.forward(tp, x, /*skip_temporal=*/true);
    FT yr = block.forward(tp, xr, /*skip_temporal=*/true);
    for (int64_t c = 0; c < 2; c++)
        for (int64_t f = 0; f < 4; f++)
            for (int64_t i = 0; i < 36; i++)
                CHECK(yr.data()[c * fhw + f * 36 + i] ==
                      y.data()[c * fhw + (3 - f) * 36 + i]);
}

TEST_CASE("attention block is the identity at init and stages factorize") {
    Rng rng(6);
    ParamStore<float> ps;
    auto attn = AttnBlock<float>::create(ps, "a", 8, 16, 6, 2, 4, rng);
    Tape<float> tp;
    FT x = FT::randn({2 * 3, 8, 4, 4}, rng);  // B=2, F=3 folded
    FT y = attn.forward(tp, x, 2);
    for (int64_t i = 0; i < x.numel(); i++) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("attention spatial stage equals per-frame attention") {
    Rng rng(7);
    ParamStore<float> ps;
    auto attn = AttnBlock<float>::create(ps, "a", 8, 16, 6, 2, 4, rng);
    // randomize the spatial projection so the spatial stage is non-trivial;
    // temporal projection stays zero so that stage is the identity
    for (int64_t i = 0; i < attn.spatial.proj.w.numel(); i++)
        attn.spatial.proj.w.data()[i] = static_cast<float>(rng.normal() * 0.2);
    Tape<float> tp;
    int64_t b = 1, f = 3;
    FT x = FT::randn({b * f, 8, 4, 4}, rng);
    FT whole = attn.forward(tp, x, b);
    for (int64_t fr = 0; fr < f; fr++) {
        FT xf = FT::zeros({1, 8, 4, 4});
        std::copy(x.data() + fr * 8 * 16, x.data() + (fr + 1) * 8 * 16, xf.data());
        FT yf = attn.forward(tp, xf, 1);
        for (int64_t i = 0; i < yf.numel(); i++)
            CHECK(whole.data()[fr * 8 * 16 + i] ==
                  doctest::Approx(yf.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("attention softmax rows sum to one through the real weight path") {
    Rng rng(8);
    ParamStore<float> ps;
    auto sa = SelfAttention<float>::create(ps, "sa", 8, 10, 2, rng);
    Tape<float> tp;
    FT x = FT::randn({3, 5, 8}, rng);
    // rebuild the score path from the layer's own weights
    FT tin = add_rowwise(tp, x, slice(tp, sa.pos, 0, 0, 5));
    FT qkv3 = sa.qkv(tp, tin);
    FT q = permute(tp, slice(tp, qkv3, 2, 0, 8).reshaped({3, 5, 2, 4}), {0, 2, 1, 3});
    FT k = permute(tp, slice(tp, qkv3, 2, 8, 8).reshaped({3, 5, 2, 4}), {0, 2, 1, 3});
    q = scale(tp, q, 0.5f);
    FT attn = softmax(tp, matmul(tp, q, permute(tp, k, {0, 1, 3, 2})), -1);
    for (int64_t row = 0; row < 3 * 2 * 5; row++) {
        double s = 0;
        for (int64_t j = 0; j < 5; j++) s += attn.data()[row * 5 + j];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("apply_scale_shift neutral, shift, and zero-scale cases") {
    Rng rng(9);
    Tape<float> tp;
    FT h = FT::randn({2, 4, 3, 3}, rng);
    FT k0 = FT::zeros({2, 4});
    FT s0 = FT::zeros({2, 4});
    FT gn = group_norm(tp, h, 2);
    FT out = apply_scale_shift(tp, h, k0, s0, 2);
    for (int64_t i = 0; i < out.numel(); i++) CHECK(out.data()[i] == gn.data()[i]);

    FT c = FT::filled({1, 2, 4, 4}, 3.0f);
    FT s5 = FT::filled({1, 2}, 5.0f);
    FT out2 = apply_scale_shift(tp, c, FT::zeros({1, 2}), s5, 1);
    for (int64_t i = 0; i < out2.numel(); i++)
        CHECK(out2.data()[i] == doctest::Approx(5.0f));

    FT km1 = FT::filled({2, 4}, -1.0f);
    FT sr = FT::randn({2, 4}, rng);
    FT out3 = apply_scale_shift(tp, h, km1, sr, 2);
    for (int64_t n = 0; n < 2; n++)
        for (int64_t ch = 0; ch < 4; ch++)
            for (int64_t i = 0; i < 9; i++)
                CHECK(out3.data()[(n * 4 + ch) * 9 + i] ==
                      doctest::Approx(sr.data()[n * 4 + ch]));
}

TEST_CASE("conditioning projection: zero init is neutral, doubling is linear") {
    Rng rng(10);
    Tape<float> tp;
    // zero-initialized block projection maps any embedding to k=s=0
    ParamStore<float> ps;
    auto blk = ResBlock<float>::create(ps, "rb", 8, 8, 16, 3, 4, rng);
    FT e = FT::randn({2, 3, 16}, rng);
    FT ks = blk.cond_proj(tp, e);
    for (int64_t i = 0; i < ks.numel(); i++) CHECK(ks.data()[i] == 0.0f);

    // bias-free linear map: doubling the embedding doubles (k,s)
    FT w = FT::randn({16, 8}, rng);
    FT ks1 = linear(tp, e, w);
    FT ks2 = linear(tp, scale(tp, e, 2.0f), w);
    for (int64_t i = 0; i < ks1.numel(); i++)
        CHECK(ks2.data()[i] == doctest::Approx(2.0f * ks1.data()[i]).epsilon(1e-5));

    // distinct frames produce distinct rows under a non-degenerate map
    FT e2 = FT::randn({1, 2, 16}, rng);
    FT r = linear(tp, e2, w);
    bool differ = false;
    for (int64_t i = 0; i < 8; i++)
        if (r.data()[i] != r.data()[8 + i]) differ = true;
    CHECK(differ);
}

TEST_CASE("sigma embedding: purity, distinctness, finiteness, domain") {
    DenoiserConfig cfg = tiny_config();
    Denoiser<float> model(cfg, 42);
    Tape<float> tp;
    FT a = model.sigma_embed(tp, {0.5, 0.5});
    for (int64_t i = 0; i < cfg.embed_dim; i++)
        CHECK(a.data()[i] == a.data()[cfg.embed_dim + i]);

    FT b = model.sigma_embed(tp, {0.5, 1.0});
    double diff = 0;
    for (int64_t i = 0; i < cfg.embed_dim; i++)
        diff += std::abs(b.data()[i] - b.data()[cfg.embed_dim + i]);
    CHECK(diff > 0.0);

    for (double sg : {1e-3, 1e-1, 1.0, 1e2, 1e3}) {
        FT f = model.sigma_embed(tp, {sg});
        for (int64_t i = 0; i < f.numel(); i++) CHECK(std::isfinite(f.data()[i]));
    }

    CHECK_THROWS_AS(sigma_features<float>({0.0}, 16), NumericError);
    CHECK_THROWS_AS(sigma_features<float>({-1.0}, 16), NumericError);
}

TEST_CASE("denoiser forward: shape contract and determinism") {
    DenoiserConfig cfg;
    cfg.channels = 1;
    cfg.base_width = 8;
    cfg.embed_dim = 32;
    cfg.heads = 2;
    cfg.gn_groups = 4;
    Denoiser<float> model(cfg, 7);
    Rng rng(1);
    Tape<float> tp;
    tp.set_recording(false);
    FT x = FT::randn({2, 1, 16, 32, 32}, rng);
    auto cond = tiny_cond<float>(cfg, 2, rng);
    FT y1 = model.forward(tp, x, cond, {0.7, 1.3});
    CHECK(y1.shape() == x.shape());
    FT y2 = model.forward(tp, x, cond, {0.7, 1.3});
    for (int64_t i = 0; i < y1.numel(); i++) CHECK(y1.data()[i] == y2.data()[i]);
}

TEST_CASE("denoiser rejects bad geometry") {
    DenoiserConfig cfg = tiny_config();
    cfg.height = 20;  // not divisible by 2^(depth-1)=2 after level split? 20 is
    cfg.width = 18;   // 18/2=9 ok for depth 2; use depth 3 to force failure
    cfg.channel_mult = {1, 2, 4};
    CHECK_THROWS_AS(Denoiser<float>(cfg, 1), ShapeError);
}

TEST_CASE("identity-at-init: output is frame-factorized") {
    DenoiserConfig cfg = tiny_config();
    cfg.zero_init_final = false;  // keep the trunk observable
    Denoiser<float> model(cfg, 11);
    Rng rng(2);
    Tape<float> tp;
    tp.set_recording(false);
    FT x = FT::randn({1, 1, 4, 16, 16}, rng);
    auto cond = tiny_cond<float>(cfg, 1, rng);
    FT base = model.forward(tp, x, cond, {0.5});

    FT xp = x.clone();
    int64_t fhw = 16 * 16;
    for (int64_t i = 0; i < fhw; i++) xp.data()[2 * fhw + i] += 0.37f;  // frame 2
    FT pert = model.forward(tp, xp, cond, {0.5});
    bool frame2_changed = false;
    for (int64_t f = 0; f < 4; f++) {
        for (int64_t i = 0; i < fhw; i++) {
            float d = std::abs(pert.data()[f * fhw + i] - base.data()[f * fhw + i]);
            if (f == 2) {
                if (d > 0) frame2_changed = true;
            } else {
                CHECK(d == 0.0f);  // exact
            }
        }
    }
    CHECK(frame2_changed);
}

TEST_CASE("null conditioning makes the output audio-independent") {
    DenoiserConfig cfg = tiny_config();
    Denoiser<float> model(cfg, 13);
    Rng rng(3);
    Tape<float> tp;
    tp.set_recording(false);
    FT x = FT::randn({2, 1, 4, 16, 16}, rng);
    auto cond_a = tiny_cond<float>(cfg, 2, rng, /*conditioned=*/false);
    auto cond_b = cond_a;
    cond_b.audio_mel = FT::randn({2, 4, MelSpec{}.feat_dim()}, rng);  // different audio
    FT ya = model.forward(tp, x, cond_a, {0.5, 0.9});
    FT yb = model.forward(tp, x, cond_b, {0.5, 0.9});
    for (int64_t i = 0; i < ya.numel(); i++) CHECK(ya.data()[i] == yb.data()[i]);
}

TEST_CASE("scale-shift path matches the literal formula bit-exactly") {
    Rng rng(14);
    Tape<float> tp;
    FT h = FT::randn({3, 8, 4, 4}, rng);
    FT k = FT::randn({3, 8}, rng, 0.5f);
    FT s = FT::randn({3, 8}, rng, 0.5f);
    FT got = apply_scale_shift(tp, h, k, s, 4);
    FT gn = group_norm(tp, h, 4);
    // literal elementwise evaluation
    for (int64_t n = 0; n < 3; n++)
        for (int64_t c = 0; c < 8; c++)
            for (int64_t i = 0; i < 16; i++) {
                float expect = gn.data()[(n * 8 + c) * 16 + i] * (k.data()[n * 8 + c] + 1.0f) +
                               s.data()[n * 8 + c];
                CHECK(got.data()[(n * 8 + c) * 16 + i] == expect);
            }
}

TEST_CASE("denoiser gradients match finite differences (sampled, 64-bit)") {
    DenoiserConfig cfg = tiny_config();
    cfg.frames = 2;
    cfg.height = 8;
    cfg.width = 8;
    Denoiser<double> model(cfg, 21);
    Rng rng(4);
    DT x = DT::randn({1, 1, 2, 8, 8}, rng, 0.7, true);
    ConditioningBundle<double> cond;
    cond.ref = DT::randn({1, 1, 8, 8}, rng, 0.5);
    cond.audio_mel = DT::randn({1, 2, MelSpec{}.feat_dim()}, rng, 0.5);
    cond.aug = DT::randn({1, cfg.aug_dim}, rng, 0.3);
    cond.cond_mask = {1};

    auto loss_fn = [&](Tape<double>& tp) {
        DT y = model.forward(tp, x, cond, {0.6});
        return mean_all(tp, mul(tp, y, y));
    };
    Tape<double> tape;
    DT loss = loss_fn(tape);
    tape.backward(loss);

    auto eval = [&]() {
        Tape<double> t2;
        t2.set_recording(false);
        return loss_fn(t2).item();
    };

    // sample a handful of parameters from every tensor family plus the input
    Rng pick(55);
    double worst = 0.0;
    auto check_tensor = [&](Tensor<double>& t, int n_checks) {
        for (int c = 0; c < n_checks; c++) {
            int64_t i = pick.uniform_int(t.numel());
            double saved = t.data()[i];
            double h = 1e-4;
            t.data()[i] = saved + h;
            double up = eval();
            t.data()[i] = saved - h;
            double dn = eval();
            t.data()[i] = saved;
            double fd = (up - dn) / (2 * h);
            double an = t.grad()[i];
            double err = std::abs(fd - an) / std::max({1e-3, std::abs(fd), std::abs(an)});
            worst = std::max(worst, err);
        }
    };
    check_tensor(x, 4);
    int64_t step = std::max<int64_t>(1, static_cast<int64_t>(model.params.entries().size()) / 24);
    for (size_t pi = 0; pi < model.params.entries().size(); pi += static_cast<size_t>(step))
        check_tensor(model.params.entries()[pi].second, 2);
    CHECK(worst < 1e-4);
}

TEST_CASE("parameter count of the reference config is frozen") {
    // hand-checked: trunk 5416099 + audio projection 10368 + embedding 33920
    DenoiserConfig cfg;
    Denoiser<float> m(cfg, 1);
    CHECK(m.params.total_params() == 5460387);
    // pure function of the architecture config: independent of the seed
    Denoiser<float> m2(cfg, 999);
    CHECK(m2.params.total_params() == 5460387);
}
