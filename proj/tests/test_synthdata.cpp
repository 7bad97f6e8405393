#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "lvd/metrics.hpp"
#include "lvd/synthdata.hpp"

using namespace lvd;

namespace {

ClipSpec small_spec() {
    ClipSpec s;
    s.duration = 1.0;  // 25 frames
    return s;
}

std::string dir_digest(const std::string& dir) {
    // order-independent digest of every file's path and bytes
    std::vector<std::string> entries;
    for (const auto& p : std::filesystem::recursive_directory_iterator(dir)) {
        if (!p.is_regular_file()) continue;
        std::ifstream is(p.path(), std::ios::binary);
        std::string data((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
        entries.push_back(p.path().filename().string() + ":" + data);
    }
    std::sort(entries.begin(), entries.end());
    uint64_t hash = 1469598103934665603ULL;
    for (const auto& e : entries)
        for (char ch : e) {
            hash ^= static_cast<unsigned char>(ch);
            hash *= 1099511628211ULL;
        }
    return strcat_(hash);
}

}  // namespace

TEST_CASE("control signal: neutral, closed-form burst, bounds") {
    Rng rng(1);
    ControlSignal neutral = gen_control(2.0, 0, rng);
    CHECK(neutral.envelope.size() == 50);
    for (float v : neutral.envelope) CHECK(v == 0.0f);
    for (float v : neutral.head_phase) CHECK(v == 0.0f);

    // single raised-cosine burst centered at t=1s peaks at frame 25
    std::vector<float> env(50, 0.0f);
    add_burst(env, 25, 1.0, 0.6, 1.0);
    int argmax = 0;
    for (int i = 1; i < 50; i++)
        if (env[static_cast<size_t>(i)] > env[static_cast<size_t>(argmax)]) argmax = i;
    CHECK(argmax == 25);
    CHECK(env[25] == doctest::Approx(1.0));
    CHECK(env[0] == 0.0f);

    for (uint64_t seed = 0; seed < 1000; seed++) {
        Rng r(seed);
        ControlSignal c = gen_control(2.0, -1, r);
        CHECK(c.envelope[0] == 0.0f);  // neutral start
        for (float v : c.envelope) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }

    Rng r2(3);
    CHECK_THROWS_AS(gen_control(0.5, -1, r2), DataError);
}

TEST_CASE("synthetic audio: silence floor, rms coupling, amplitude bound") {
    Rng rng(4);
    ControlSignal neutral = gen_control(2.0, 0, rng);
    Waveform silence = synth_audio(neutral, rng);
    double mean = 0, var = 0;
    for (float v : silence.samples) mean += v;
    mean /= static_cast<double>(silence.samples.size());
    for (float v : silence.samples) var += (v - mean) * (v - mean);
    var /= static_cast<double>(silence.samples.size());
    CHECK(std::sqrt(var) <= 0.012);

    // per-frame RMS tracks the envelope
    Rng rng2(5);
    ControlSignal laugh = gen_control(2.0, -1, rng2);
    Waveform audio = synth_audio(laugh, rng2);
    CHECK(audio.samples.size() == laugh.envelope.size() * 640);
    std::vector<double> rms = frame_rms(audio, static_cast<int64_t>(laugh.envelope.size()));
    std::vector<double> env(laugh.envelope.begin(), laugh.envelope.end());
    CHECK(pearson(rms, env) > 0.95);

    for (float v : audio.samples) CHECK(std::abs(v) <= 0.9f + 4 * 0.01f);
}

TEST_CASE("rendering: neutral pose, mouth growth, pixel range, probe") {
    SpeakerParams spk = speaker_params(3, 42);
    std::vector<float> closed = render_frame(spk, 0.0f, 0.0f, 32, 32);
    std::vector<float> open = render_frame(spk, 1.0f, 0.0f, 32, 32);

    for (float v : closed) {
        CHECK(v >= -1.0f);
        CHECK(v <= 1.0f);
    }
    // neutral frame is reproducible (the speaker's resting face)
    std::vector<float> closed2 = render_frame(spk, 0.0f, 0.0f, 32, 32);
    for (size_t i = 0; i < closed.size(); i++) CHECK(closed[i] == closed2[i]);

    // mouth-region pixel count strictly larger when open
    auto mouth_count = [](const std::vector<float>& img) {
        int count = 0;
        for (int i = 0; i < 32 * 32; i++) {
            bool hit = std::abs(img[static_cast<size_t>(i)] - kMouthColor[0]) < 0.25f &&
                       std::abs(img[static_cast<size_t>(1024 + i)] - kMouthColor[1]) < 0.25f &&
                       std::abs(img[static_cast<size_t>(2048 + i)] - kMouthColor[2]) < 0.25f;
            if (hit) count++;
        }
        return count;
    };
    CHECK(mouth_count(open) > mouth_count(closed));

    // probe: neutral aperture within 1 px of the resting value, monotone,
    // deterministic, for every speaker
    for (uint64_t s = 0; s < 10; s++) {
        SpeakerParams p = speaker_params(s, 42);
        std::vector<float> c0 = render_frame(p, 0.0f, 0.0f, 32, 32);
        std::vector<float> c1 = render_frame(p, 1.0f, 0.0f, 32, 32);
        double a0 = mouth_aperture_probe(c0.data(), 32, 32);
        double a1 = mouth_aperture_probe(c1.data(), 32, 32);
        CHECK(std::abs(a0 - p.mouth_open_rest) <= 1.0);
        CHECK(a1 > a0);
        CHECK(mouth_aperture_probe(c0.data(), 32, 32) == a0);
    }
}

TEST_CASE("corpus: counts, split disjointness, determinism on disk") {
    ClipSpec spec = small_spec();
    Corpus corpus = gen_corpus(10, 3, 77, spec);
    CHECK(corpus.clips.size() == 30);
    CHECK(corpus.split_indices("train").size() == 24);
    CHECK(corpus.split_indices("val").size() == 3);
    CHECK(corpus.split_indices("test").size() == 3);

    // no speaker appears in two splits
    std::map<uint64_t, std::set<std::string>> seen;
    for (size_t i = 0; i < corpus.manifest.clip_ids.size(); i++)
        seen[corpus.manifest.clip_speakers[i]].insert(corpus.manifest.splits[i]);
    for (const auto& [spk, splits] : seen) CHECK(splits.size() == 1);

    // every speaker has both labels
    std::map<uint64_t, std::set<std::string>> labels;
    for (size_t i = 0; i < corpus.manifest.clip_ids.size(); i++)
        labels[corpus.manifest.clip_speakers[i]].insert(corpus.manifest.clip_labels[i]);
    for (const auto& [spk, ls] : labels) CHECK(ls.size() == 2);

    // byte-identical regeneration
    std::string d1 = "/tmp/lvd_corpus_a", d2 = "/tmp/lvd_corpus_b";
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    save_corpus(corpus, d1);
    Corpus again = gen_corpus(10, 3, 77, spec);
    save_corpus(again, d2);
    CHECK(dir_digest(d1) == dir_digest(d2));

    // roundtrip
    Corpus loaded = load_corpus(d1);
    CHECK(loaded.clips.size() == corpus.clips.size());
    CHECK(loaded.manifest.splits == corpus.manifest.splits);
    for (int64_t i = 0; i < corpus.clips[0].frames.numel(); i++)
        CHECK(loaded.clips[0].frames.data()[i] == corpus.clips[0].frames.data()[i]);

    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);

    CHECK_THROWS_AS(gen_corpus(3, 3, 1, spec), DataError);
}

TEST_CASE("corpus coupling invariant and label separability") {
    ClipSpec spec = small_spec();
    Corpus corpus = gen_corpus(5, 3, 123, spec);
    // audio RMS vs ground-truth mouth aperture across the whole corpus
    std::vector<double> all_rms, all_aperture;
    double laugh_energy_min = 1e9, neutral_energy_max = -1e9;
    for (const auto& clip : corpus.clips) {
        int64_t f = clip.frames.dim(0);
        std::vector<double> rms = frame_rms(clip.waveform, f);
        int64_t chw = clip.frames.numel() / f;
        double energy = 0;
        for (int64_t i = 0; i < f; i++) {
            all_rms.push_back(rms[static_cast<size_t>(i)]);
            all_aperture.push_back(
                mouth_aperture_probe(clip.frames.data() + i * chw, 32, 32));
            energy += clip.control.envelope[static_cast<size_t>(i)] *
                      clip.control.envelope[static_cast<size_t>(i)];
        }
        if (clip.label == "laughter") laugh_energy_min = std::min(laugh_energy_min, energy);
        else neutral_energy_max = std::max(neutral_energy_max, energy);
    }
    CHECK(pearson(all_rms, all_aperture) > 0.9);
    CHECK(laugh_energy_min > neutral_energy_max);
}
