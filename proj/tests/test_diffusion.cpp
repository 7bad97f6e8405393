#include <doctest.h>

#include <cmath>

#include "lvd/diffusion.hpp"

using namespace lvd;
using FT = Tensor<float>;
using DT = Tensor<double>;

namespace {

// constant-output oracle denoiser
template <typename S>
DenoiseFn<S> const_denoiser(S c) {
    return [c](Tape<S>&, Tensor<S> x, const std::vector<double>&) {
        return Tensor<S>::filled(x.shape(), c);
    };
}

template <typename S>
ClipDenoiserFactory<S> const_factory(S c) {
    return [c](Tensor<S>, Tensor<S>) { return const_denoiser<S>(c); };
}

}  // namespace

TEST_CASE("sigma ladder endpoints, linearity at rho=1, monotonicity") {
    NoiseSchedule s;
    s.sigma_min = 0.002;
    s.sigma_max = 80.0;
    s.rho = 7.0;
    s.steps = 32;
    auto lad = sigma_ladder(s);
    CHECK(lad.size() == 33);
    CHECK(lad[0] == doctest::Approx(80.0));
    CHECK(lad[31] == doctest::Approx(0.002));
    CHECK(lad[32] == 0.0);
    for (int i = 0; i + 2 < static_cast<int>(lad.size()); i++)
        CHECK(lad[static_cast<size_t>(i)] > lad[static_cast<size_t>(i + 1)]);
    // closed form, evaluated independently
    for (int i = 0; i < 32; i++) {
        double a = std::pow(80.0, 1.0 / 7.0), b = std::pow(0.002, 1.0 / 7.0);
        double expect = std::pow(a + (i / 31.0) * (b - a), 7.0);
        CHECK(lad[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-12));
    }

    NoiseSchedule lin = s;
    lin.rho = 1.0;
    lin.sigma_min = 1.0;
    lin.sigma_max = 11.0;
    lin.steps = 11;
    auto ll = sigma_ladder(lin);
    for (int i = 0; i < 11; i++)
        CHECK(ll[static_cast<size_t>(i)] == doctest::Approx(11.0 - i));

    NoiseSchedule bad = s;
    bad.steps = 1;
    CHECK_THROWS_AS(sigma_ladder(bad), ConfigError);
}

TEST_CASE("sigma ladder property sweep over random configs") {
    Rng rng(17);
    for (int t = 0; t < 50; t++) {
        NoiseSchedule s;
        s.sigma_min = rng.uniform(1e-4, 0.5);
        s.sigma_max = s.sigma_min * rng.uniform(2.0, 1000.0);
        s.rho = rng.uniform(1.0, 10.0);
        s.steps = 2 + static_cast<int>(rng.uniform_int(60));
        auto lad = sigma_ladder(s);
        CHECK(lad.front() == doctest::Approx(s.sigma_max).epsilon(1e-9));
        CHECK(lad[lad.size() - 2] == doctest::Approx(s.sigma_min).epsilon(1e-9));
        CHECK(lad.back() == 0.0);
        for (size_t i = 0; i + 1 < lad.size(); i++)
            CHECK(lad[i] > lad[i + 1]);
    }
}

TEST_CASE("perturb: zero sigma exact, Monte-Carlo moments at sigma=0.5") {
    Rng rng(5);
    FT x = FT::randn({10, 10}, rng);
    auto [xt0, n0] = perturb(x, 0.0, rng);
    for (int64_t i = 0; i < x.numel(); i++) {
        CHECK(xt0.data()[i] == x.data()[i]);
        CHECK(n0.data()[i] == 0.0f);
    }

    FT big = FT::zeros({1000, 1000});
    Rng rng2(6);
    auto [xt, n] = perturb(big, 0.5, rng2);
    double mean = 0, var = 0;
    int64_t m = n.numel();
    for (int64_t i = 0; i < m; i++) mean += n.data()[i];
    mean /= static_cast<double>(m);
    for (int64_t i = 0; i < m; i++)
        var += (n.data()[i] - mean) * (n.data()[i] - mean);
    var /= static_cast<double>(m);
    double stdev = std::sqrt(var);
    CHECK(stdev >= 0.498);
    CHECK(stdev <= 0.502);
    CHECK(mean >= -0.002);
    CHECK(mean <= 0.002);

    CHECK_THROWS_AS(perturb(x, -0.1, rng), NumericError);
}

TEST_CASE("preconditioning coefficients: limits, closed forms, identity") {
    double sd = 0.5;
    auto c = precond_coeffs(1e-8, sd);
    CHECK(c.c_skip == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(c.c_out) < 1e-7);

    auto ce = precond_coeffs(sd, sd);
    CHECK(ce.c_skip == doctest::Approx(0.5));
    CHECK(ce.c_in == doctest::Approx(1.0 / (sd * std::sqrt(2.0))));

    for (double sg : {0.01, 0.1, 0.5, 1.0, 5.0, 40.0, 80.0}) {
        auto cc = precond_coeffs(sg, sd);
        double lhs = cc.c_out * cc.c_in * sd;
        double rhs = sg * sd * sd / (sg * sg + sd * sd);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));
    }
    CHECK_THROWS_AS(precond_coeffs(0.0, sd), NumericError);

    // sigma -> 0 limit drives D toward x_t through the skip path
    Tape<double> tp;
    Rng rng(7);
    DT x = DT::randn({2, 5}, rng);
    auto zero_raw = [](Tape<double>&, DT xin, const std::vector<double>&) {
        return DT::zeros(xin.shape());
    };
    DT d = precondition<double>(tp, zero_raw, x, {1e-9, 1e-9}, sd);
    for (int64_t i = 0; i < x.numel(); i++)
        CHECK(d.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("edm loss: perfect denoiser, passthrough statistics, weight linearity") {
    NoiseSchedule sched;
    Rng rng(8);
    FT batch = FT::randn({4, 3, 2, 2}, rng, 0.4f);

    // cheating wrapper returns the clean target: loss is exactly 0
    DenoiseFn<float> cheat = [&batch](Tape<float>&, FT x, const std::vector<double>&) {
        (void)x;
        return batch.clone();
    };
    Tape<float> tp;
    FT l0 = edm_loss(tp, cheat, batch, sched, rng);
    CHECK(l0.item() == 0.0f);

    // passthrough denoiser at sigma=0.5, unit weight: loss ~ sigma^2 with
    // Monte-Carlo tolerance 3*std over 1e4 draws
    FT big = FT::randn({4, 2500}, rng, 0.3f);
    DenoiseFn<float> passthrough = [](Tape<float>&, FT x, const std::vector<double>&) {
        return x;
    };
    std::vector<double> fixed(4, 0.5);
    EdmLossOptions opt;
    opt.fixed_sigmas = &fixed;
    opt.unit_weight = true;
    Rng rl(9);
    Tape<float> tp2;
    FT lp = edm_loss(tp2, passthrough, big, sched, rl, nullptr, opt);
    double tol = 3.0 * 0.25 * std::sqrt(2.0 / 10000.0);
    CHECK(std::abs(lp.item() - 0.25) < tol);

    // doubling the weight doubles the loss for fixed draws
    EdmLossOptions o1;
    o1.fixed_sigmas = &fixed;
    Rng ra(10), rb(10);
    Tape<float> ta, tb;
    FT la = edm_loss(tb, passthrough, big, sched, ra, nullptr, o1);
    EdmLossOptions o2 = o1;
    o2.weight_scale = 2.0;
    FT lb = edm_loss(ta, passthrough, big, sched, rb, nullptr, o2);
    CHECK(lb.item() == doctest::Approx(2.0f * la.item()).epsilon(1e-6));

    // positivity
    CHECK(lp.item() >= 0.0f);
    CHECK(la.item() >= 0.0f);
}

TEST_CASE("cfg combination: degenerate weight, arithmetic, collinearity") {
    Rng rng(11);
    Tape<float> tp;
    FT x = FT::randn({2, 4}, rng);

    int uncond_calls = 0;
    DenoiseFn<float> cond = [](Tape<float>&, FT xin, const std::vector<double>&) {
        return Tensor<float>::filled(xin.shape(), 1.0f);
    };
    DenoiseFn<float> uncond = [&uncond_calls](Tape<float>&, FT xin,
                                              const std::vector<double>&) {
        uncond_calls++;
        return Tensor<float>::zeros(xin.shape());
    };

    FT d1 = cfg_denoise(tp, cond, uncond, x, {0.5, 0.5}, 1.0);
    CHECK(uncond_calls == 0);  // w=1 never evaluates the unconditional branch
    FT dc = cond(tp, x, {0.5, 0.5});
    for (int64_t i = 0; i < d1.numel(); i++) CHECK(d1.data()[i] == dc.data()[i]);

    FT d2 = cfg_denoise(tp, cond, uncond, x, {0.5, 0.5}, 2.0);
    CHECK(uncond_calls == 1);
    for (int64_t i = 0; i < d2.numel(); i++) CHECK(d2.data()[i] == 2.0f);

    // cfg - uncond = w * (cond - uncond) for random branch outputs
    Rng r2(12);
    FT co = FT::randn({2, 4}, r2);
    FT uo = FT::randn({2, 4}, r2);
    DenoiseFn<float> fc = [co](Tape<float>&, FT, const std::vector<double>&) { return co; };
    DenoiseFn<float> fu = [uo](Tape<float>&, FT, const std::vector<double>&) { return uo; };
    double w = 1.7;
    FT dg = cfg_denoise(tp, fc, fu, x, {0.5, 0.5}, w);
    for (int64_t i = 0; i < dg.numel(); i++) {
        double lhs = dg.data()[i] - uo.data()[i];
        double rhs = w * (co.data()[i] - uo.data()[i]);
        CHECK(std::abs(lhs - rhs) < 1e-6);
    }
    CHECK_THROWS_AS(cfg_denoise(tp, fc, fu, x, {0.5, 0.5}, 0.5), ConfigError);
}

TEST_CASE("heun sampler: constant denoiser returns the constant exactly") {
    NoiseSchedule sched;
    sched.steps = 8;
    Rng rng(13);
    for (uint64_t seed : {1ull, 42ull, 999ull}) {
        Rng r(seed);
        FT clip = sample_clip(const_factory(0.37f), FT::zeros({1, 1, 2, 2}),
                              FT::zeros({1, 4, 80}), {1, 1, 4, 2, 2}, sched, 8, r);
        for (int64_t i = 0; i < clip.numel(); i++) CHECK(clip.data()[i] == 0.37f);
    }
}

TEST_CASE("heun sampler: zero denoiser with a single step collapses to zero") {
    Tape<float> tp;
    tp.set_recording(false);
    Rng rng(14);
    FT x0 = FT::randn({1, 8}, rng, 80.0f);
    FT out = ode_integrate(tp, const_denoiser(0.0f), x0, {80.0, 0.0});
    for (int64_t i = 0; i < out.numel(); i++) CHECK(out.data()[i] == 0.0f);
}

TEST_CASE("solver self-convergence: Heun is second order, Euler first") {
    DenoiseFn<double> oracle = [](Tape<double>&, DT x, const std::vector<double>& sg) {
        DT out = DT::zeros(x.shape());
        for (int64_t i = 0; i < x.numel(); i++)
            out.data()[i] =
                x.data()[i] - sg[0] * std::sin(x.data()[i]) / (1.0 + sg[0] * sg[0]);
        return out;
    };
    Rng rng(3);
    DT x0 = DT::randn({1, 8}, rng, 2.0);
    auto run = [&](int n, SolverKind k) {
        NoiseSchedule s;
        s.sigma_min = 0.1;
        s.sigma_max = 10.0;
        s.rho = 7.0;
        s.steps = n;
        auto lad = sigma_ladder(s);
        lad.pop_back();  // stop at sigma_min: order measurement on the smooth flow
        Tape<double> tp;
        tp.set_recording(false);
        return ode_integrate(tp, oracle, x0, lad, k);
    };
    DT ref = run(1280, SolverKind::heun);  // 10x the largest N below
    auto err_at = [&](int n, SolverKind k) {
        DT got = run(n, k);
        double e = 0;
        for (int64_t i = 0; i < got.numel(); i++)
            e = std::max(e, std::abs(got.data()[i] - ref.data()[i]));
        return e;
    };
    double h16 = err_at(16, SolverKind::heun), h128 = err_at(128, SolverKind::heun);
    double e16 = err_at(16, SolverKind::euler), e128 = err_at(128, SolverKind::euler);
    double heun_slope = std::log2(h16 / h128) / 3.0;
    double euler_slope = std::log2(e16 / e128) / 3.0;
    CHECK(heun_slope > 1.7);
    CHECK(heun_slope < 2.3);
    CHECK(euler_slope > 0.8);
    CHECK(euler_slope < 1.2);
}

TEST_CASE("autoregressive generation: clip counts, trimming, seams") {
    NoiseSchedule sched;
    sched.steps = 4;
    SamplerConfig scfg;
    scfg.steps = 4;
    scfg.seed = 21;

    // 16-frame audio: one clip, identical to a direct clip sample
    Waveform audio16;
    audio16.samples.assign(16 * 640, 0.1f);
    FT ref = FT::zeros({1, 1, 4, 4});
    FT gen = autoregressive_generate(const_factory(0.25f), ref, audio16, sched,
                                     scfg, 1, 4, 4);
    CHECK(gen.shape() == Shape{1, 1, 16, 4, 4});
    for (int64_t i = 0; i < gen.numel(); i++) CHECK(gen.data()[i] == 0.25f);

    // 40-frame audio: 3 clips generated, trimmed back to 40 frames
    Waveform audio40;
    audio40.samples.assign(40 * 640, 0.1f);
    FT gen40 = autoregressive_generate(const_factory(-0.5f), ref, audio40, sched,
                                       scfg, 1, 4, 4);
    CHECK(gen40.shape() == Shape{1, 1, 40, 4, 4});
    // constant oracle: zero discontinuity at every clip boundary
    for (int64_t f = 0; f + 1 < 40; f++)
        for (int64_t i = 0; i < 16; i++)
            CHECK(gen40.data()[f * 16 + i] == gen40.data()[(f + 1) * 16 + i]);

    Waveform empty;
    CHECK_THROWS_AS(autoregressive_generate(const_factory(0.0f), ref, empty, sched,
                                            scfg, 1, 4, 4),
                    DataError);
}
