#include <doctest.h>

#include <cmath>

#include "lvd/metrics.hpp"

using namespace lvd;
using FT = Tensor<float>;

TEST_CASE("ssim: identity, constant contrast, symmetry") {
    Rng rng(1);
    FT a = FT::randn({3, 16, 16}, rng, 0.4f);
    for (int64_t i = 0; i < a.numel(); i++)
        a.data()[i] = std::clamp(a.data()[i], -1.0f, 1.0f);
    CHECK(ssim(a.data(), a.data(), 3, 16, 16) == 1.0);

    FT zero = FT::filled({1, 16, 16}, -1.0f);  // 0 after rescale
    FT one = FT::filled({1, 16, 16}, 1.0f);    // 1 after rescale
    double s = ssim(zero.data(), one.data(), 1, 16, 16);
    CHECK(s < 0.01);
    CHECK(s > 0.0);

    FT b = FT::randn({3, 16, 16}, rng, 0.4f);
    double sab = ssim(a.data(), b.data(), 3, 16, 16);
    double sba = ssim(b.data(), a.data(), 3, 16, 16);
    CHECK(std::abs(sab - sba) < 1e-9);
    CHECK(sab < 1.0);
    CHECK(sab <= 1.0);
}

TEST_CASE("frechet: identity, 1-D closed form, mean shift, symmetry") {
    Rng rng(2);
    EmbeddingSet a;
    a.n = 64;
    a.d = 3;
    for (int i = 0; i < 64 * 3; i++) a.feats.push_back(rng.normal());
    CHECK(frechet(a, a) < 1e-6);

    // 1-D gaussians: distance equals (mu1-mu2)^2 + (s1-s2)^2 on the fitted
    // moments themselves
    EmbeddingSet g1, g2;
    g1.n = g2.n = 10000;
    g1.d = g2.d = 1;
    for (int i = 0; i < 10000; i++) {
        g1.feats.push_back(0.5 + 1.3 * rng.normal());
        g2.feats.push_back(-0.7 + 0.6 * rng.normal());
    }
    auto moments = [](const EmbeddingSet& e) {
        double mu = 0;
        for (double v : e.feats) mu += v;
        mu /= static_cast<double>(e.n);
        double var = 0;
        for (double v : e.feats) var += (v - mu) * (v - mu);
        var /= static_cast<double>(e.n - 1);
        return std::pair<double, double>(mu, std::sqrt(var));
    };
    auto [m1, s1] = moments(g1);
    auto [m2, s2] = moments(g2);
    double expect = (m1 - m2) * (m1 - m2) + (s1 - s2) * (s1 - s2);
    CHECK(frechet(g1, g2) == doctest::Approx(expect).epsilon(1e-6));

    // equal covariance, means shifted by v: distance is |v|^2
    EmbeddingSet base, shifted;
    base.n = shifted.n = 256;
    base.d = shifted.d = 4;
    std::vector<double> v = {0.3, -1.1, 0.25, 0.8};
    double v2 = 0;
    for (double x : v) v2 += x * x;
    for (int i = 0; i < 256; i++)
        for (int j = 0; j < 4; j++) {
            double x = rng.normal();
            base.feats.push_back(x);
            shifted.feats.push_back(x + v[static_cast<size_t>(j)]);
        }
    CHECK(frechet(base, shifted) == doctest::Approx(v2).epsilon(1e-6));
    CHECK(std::abs(frechet(base, shifted) - frechet(shifted, base)) < 1e-6);

    EmbeddingSet bad = base;
    bad.feats[0] = std::nan("");
    CHECK_THROWS_AS(frechet(bad, base), NumericError);
}

TEST_CASE("clip embedding: determinism, fixed dimension, motion components") {
    SpeakerParams spk = speaker_params(1, 5);
    ClipSpec spec;
    spec.duration = 0.64;
    Rng rng(3);
    ClipRecord moving = gen_clip(spk, "laughter", spec, rng, "m");
    ClipRecord still = gen_clip(spk, "neutral", spec, rng, "s");

    std::vector<double> e1 = clip_embed(moving.frames);
    std::vector<double> e2 = clip_embed(moving.frames);
    CHECK(e1 == e2);
    CHECK(e1.size() == clip_embed(still.frames).size());
    CHECK(e1.size() == 16u * 3u * 2u + 3u + 4u);

    // temporal-difference components: zero for the static clip
    std::vector<double> es = clip_embed(still.frames);
    double still_td = 0, moving_td = 0;
    for (size_t i = e1.size() - 4; i < e1.size(); i++) {
        still_td += es[i];
        moving_td += e1[i];
    }
    CHECK(still_td == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(moving_td > 0.0);
}

TEST_CASE("optical flow: static video, known shift, nonnegativity") {
    // static video
    SpeakerParams spk = speaker_params(2, 5);
    std::vector<float> img = render_frame(spk, 0.3f, 0.0f, 32, 32);
    FT vid = FT::zeros({4, 3, 32, 32});
    for (int f = 0; f < 4; f++)
        std::copy(img.begin(), img.end(), vid.data() + f * 3 * 1024);
    std::vector<float> heat = flow_magnitude(vid);
    for (float v : heat) {
        CHECK(v >= 0.0f);
        CHECK(v < 1e-6f);
    }

    // 1 px horizontal shift of a smooth texture
    Rng rng(9);
    std::vector<float> tex(34 * 34);
    for (auto& v : tex) v = static_cast<float>(rng.uniform(0.0, 1.0));
    // two box-blur passes for smoothness
    for (int pass = 0; pass < 2; pass++) {
        std::vector<float> blurred = tex;
        for (int y = 1; y < 33; y++)
            for (int x = 1; x < 33; x++) {
                float acc = 0;
                for (int dy = -1; dy <= 1; dy++)
                    for (int dx = -1; dx <= 1; dx++)
                        acc += tex[static_cast<size_t>((y + dy) * 34 + x + dx)];
                blurred[static_cast<size_t>(y * 34 + x)] = acc / 9.0f;
            }
        tex.swap(blurred);
    }
    FT pair = FT::zeros({2, 1, 32, 32});
    for (int y = 0; y < 32; y++)
        for (int x = 0; x < 32; x++) {
            // frames in [-1,1]; the flow module rescales internally
            pair.data()[y * 32 + x] = tex[static_cast<size_t>((y + 1) * 34 + x + 1)] * 2 - 1;
            pair.data()[1024 + y * 32 + x] =
                tex[static_cast<size_t>((y + 1) * 34 + x + 2)] * 2 - 1;  // shift left by 1
        }
    std::vector<float> shift_heat = flow_magnitude(pair);
    double central = 0;
    int count = 0;
    for (int y = 8; y < 24; y++)
        for (int x = 8; x < 24; x++) {
            central += shift_heat[static_cast<size_t>(y * 32 + x)];
            count++;
        }
    central /= count;
    INFO("central mean magnitude " << central);
    CHECK(central > 0.7);
    CHECK(central < 1.3);

    FT single = FT::zeros({1, 1, 32, 32});
    CHECK_THROWS_AS(flow_magnitude(single), DataError);
}

TEST_CASE("av sync: ground truth, degenerate series, reversed control") {
    ClipSpec spec;
    spec.duration = 2.0;
    SpeakerParams spk = speaker_params(4, 11);
    Rng rng(13);
    ClipRecord clip = gen_clip(spk, "laughter", spec, rng, "c");
    CHECK(av_sync(clip.frames, clip.waveform) > 0.9);

    // frozen face with laughter audio: zero-variance probe series
    FT frozen = FT::zeros(clip.frames.shape());
    int64_t chw = clip.frames.numel() / clip.frames.dim(0);
    for (int64_t f = 0; f < clip.frames.dim(0); f++)
        std::copy(clip.frames.data(), clip.frames.data() + chw,
                  frozen.data() + f * chw);
    CHECK_THROWS_AS(av_sync(frozen, clip.waveform), NumericError);

    // time-reversed video scores clearly below the matched pairing on a
    // burst-asymmetric clip (single early burst)
    ControlSignal ctl;
    ctl.fps = 25;
    ctl.envelope.assign(50, 0.0f);
    ctl.head_phase.assign(50, 0.0f);
    add_burst(ctl.envelope, 25, 0.5, 0.5, 1.0);
    ctl.burst_centers = {0.5};
    ctl.burst_widths = {0.5};
    Rng arng(17);
    Waveform audio = synth_audio(ctl, arng);
    FT frames = FT::zeros({50, 3, 32, 32});
    for (int f = 0; f < 50; f++) {
        std::vector<float> img = render_frame(spk, ctl.envelope[static_cast<size_t>(f)],
                                              0.0f, 32, 32);
        std::copy(img.begin(), img.end(), frames.data() + f * 3 * 1024);
    }
    FT reversed = FT::zeros(frames.shape());
    for (int f = 0; f < 50; f++)
        std::copy(frames.data() + f * 3 * 1024, frames.data() + (f + 1) * 3 * 1024,
                  reversed.data() + (49 - f) * 3 * 1024);
    double matched = av_sync(frames, audio);
    double mismatched = av_sync(reversed, audio);
    CHECK(matched - mismatched > 0.3);
}

TEST_CASE("laughter classifier: accuracy, negative control, chance level") {
    ClipSpec spec;
    spec.duration = 1.0;
    Corpus corpus = gen_corpus(6, 6, 99, spec);
    LcOptions opt;
    opt.steps = 350;
    LaughterClassifier lc = train_lc(corpus, opt);

    double acc = lc_accuracy(lc, corpus, "test");
    INFO("test accuracy " << acc);
    CHECK(acc >= 99.0);

    // frozen neutral faces are almost never classified as laughter
    std::vector<Tensor<float>> frozen;
    for (int64_t i : corpus.split_indices("test")) {
        const ClipRecord& clip = corpus.clips[static_cast<size_t>(i)];
        FT v = FT::zeros({16, 3, 32, 32});
        int64_t chw = 3 * 1024;
        for (int f = 0; f < 16; f++)
            std::copy(clip.frames.data(), clip.frames.data() + chw,
                      v.data() + f * chw);
        frozen.push_back(v);
    }
    CHECK(lc_score(lc, frozen) <= 5.0);

    // label shuffling drives test accuracy to chance; the balanced corpus
    // keeps a majority-class collapse at exactly 50%
    Corpus balanced = gen_corpus(10, 10, 99, spec, 2);
    LcOptions shuffled = opt;
    shuffled.steps = 150;
    shuffled.shuffle_labels = true;
    LaughterClassifier lc2 = train_lc(balanced, shuffled);
    double acc2 = lc_accuracy(lc2, balanced, "test");
    INFO("shuffled-label accuracy " << acc2);
    CHECK(acc2 >= 40.0);
    CHECK(acc2 <= 60.0);

    // single-class corpus rejected
    Corpus mono = corpus;
    for (auto& l : mono.manifest.clip_labels) l = "laughter";
    CHECK_THROWS_AS(train_lc(mono, opt), DataError);
}

TEST_CASE("metric report file schema") {
    MetricReport r;
    r.ssim_mean = 0.5;
    r.lc_score_gen = 87.0;
    write_report("/tmp/lvd_report.txt", r);
    std::string text = read_text_file("/tmp/lvd_report.txt");
    for (const char* key : {"ssim =", "frechet =", "lc_accuracy =", "lc_score =",
                            "av_sync =", "flow_cosine ="})
        CHECK(text.find(key) != std::string::npos);
    std::remove("/tmp/lvd_report.txt");
}
