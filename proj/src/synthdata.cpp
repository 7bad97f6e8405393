#include "lvd/synthdata.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace lvd {

namespace {
constexpr double kPi = 3.14159265358979323846;

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace

SpeakerParams speaker_params(uint64_t speaker_id, uint64_t corpus_seed) {
    Rng rng(mix_seed(corpus_seed, speaker_id, 0xfacefaceULL));
    SpeakerParams p;
    p.id = speaker_id;
    p.face_rgb[0] = static_cast<float>(rng.uniform(0.45, 0.95));
    p.face_rgb[1] = static_cast<float>(rng.uniform(0.15, 0.65));
    p.face_rgb[2] = static_cast<float>(rng.uniform(-0.2, 0.35));
    // the mouth is the only palette entry with a strongly negative green
    // channel, so probes can identify it from pixels alone
    p.eye_rgb[0] = static_cast<float>(rng.uniform(-0.8, -0.55));
    p.eye_rgb[1] = static_cast<float>(rng.uniform(-0.35, -0.1));
    p.eye_rgb[2] = static_cast<float>(rng.uniform(-0.35, 0.1));
    p.bg_rgb[0] = static_cast<float>(rng.uniform(-0.9, -0.5));
    p.bg_rgb[1] = static_cast<float>(rng.uniform(-0.35, 0.0));
    p.bg_rgb[2] = static_cast<float>(rng.uniform(-0.9, -0.5));
    p.face_rx = rng.uniform(10.0, 12.0);
    p.face_ry = rng.uniform(11.0, 13.0);
    p.eye_dx = rng.uniform(3.4, 4.6);
    p.eye_y = rng.uniform(-5.2, -3.8);
    p.eye_r = rng.uniform(1.4, 2.0);
    p.mouth_y = rng.uniform(4.8, 6.2);
    p.mouth_rx = rng.uniform(3.4, 4.6);
    p.mouth_open_rest = 2.5;
    p.mouth_open_gain = rng.uniform(5.2, 6.8);
    p.head_amp = rng.uniform(0.9, 1.4);
    return p;
}

void add_burst(std::vector<float>& envelope, int fps, double center, double width,
               double amp) {
    for (size_t f = 0; f < envelope.size(); f++) {
        double t = static_cast<double>(f) / fps;
        if (std::abs(t - center) <= width / 2.0) {
            double bump = 0.5 * (1.0 + std::cos(2.0 * kPi * (t - center) / width));
            envelope[f] += static_cast<float>(amp * bump);
        }
    }
}

ControlSignal gen_control(double duration, int n_bursts, Rng& rng, int fps) {
    if (duration < 0.64)
        throw DataError(strcat_("clip duration ", duration, "s is below the 16-frame minimum"));
    int frames = static_cast<int>(std::lround(duration * fps));
    ControlSignal c;
    c.fps = fps;
    c.envelope.assign(static_cast<size_t>(frames), 0.0f);
    c.head_phase.assign(static_cast<size_t>(frames), 0.0f);

    int n = n_bursts < 0 ? 1 + static_cast<int>(rng.uniform_int(4)) : n_bursts;
    for (int j = 0; j < n; j++) {
        double width = rng.uniform(0.2, 0.8);
        // keep the support strictly after frame 0 (neutral start)
        double lo = width / 2.0 + 2.0 / fps;
        double hi = std::max(lo + 1e-6, duration - 0.05);
        double center = rng.uniform(lo, hi);
        double amp = rng.uniform(0.6, 1.0);
        c.burst_centers.push_back(center);
        c.burst_widths.push_back(width);
        add_burst(c.envelope, fps, center, width, amp);
    }
    for (auto& v : c.envelope) v = std::min(v, 1.0f);

    double f_head = rng.uniform(0.5, 1.5);
    double phase0 = rng.uniform(0.0, 2.0 * kPi);
    for (int f = 0; f < frames; f++) {
        double t = static_cast<double>(f) / fps;
        c.head_phase[static_cast<size_t>(f)] = static_cast<float>(
            std::sin(2.0 * kPi * f_head * t + phase0) * c.envelope[static_cast<size_t>(f)]);
    }
    return c;
}

Waveform synth_audio(const ControlSignal& control, Rng& rng, int sample_rate) {
    int frames = static_cast<int>(control.envelope.size());
    int spf = sample_rate / control.fps;
    int64_t n = static_cast<int64_t>(frames) * spf;
    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(n));

    // per-burst pitch jitter around the 180 Hz fundamental
    std::vector<double> jitter(control.burst_centers.size());
    for (auto& j : jitter) j = rng.uniform(-0.05, 0.05);

    double phase = 0.0;
    for (int64_t s = 0; s < n; s++) {
        double t = static_cast<double>(s) / sample_rate;
        // envelope linearly interpolated between frame midpoints
        double fpos = t * control.fps;
        int f0 = std::min(frames - 1, static_cast<int>(fpos));
        int f1 = std::min(frames - 1, f0 + 1);
        double frac = fpos - f0;
        double env = (1.0 - frac) * control.envelope[static_cast<size_t>(f0)] +
                     frac * control.envelope[static_cast<size_t>(f1)];

        double fr = 180.0;
        for (size_t j = 0; j < control.burst_centers.size(); j++)
            if (std::abs(t - control.burst_centers[j]) <= control.burst_widths[j] / 2.0)
                fr = 180.0 * (1.0 + jitter[j]);
        phase += 2.0 * kPi * fr / sample_rate;

        double carrier = (std::sin(phase) + 0.5 * std::sin(2.0 * phase) +
                          0.25 * std::sin(3.0 * phase)) /
                         1.75;
        // staccato amplitude modulation at 5 Hz, shallow enough that the
        // per-frame RMS still tracks the envelope tightly
        double ha = 0.5 - 0.5 * std::cos(2.0 * kPi * 5.0 * t);
        double m = 0.85 + 0.15 * ha * ha;
        double v = carrier * m * env + 0.01 * rng.normal();
        w.samples[static_cast<size_t>(s)] = static_cast<float>(v);
    }
    float peak = 0.0f;
    for (float v : w.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.9f) {
        float sc = 0.9f / peak;
        for (auto& v : w.samples) v *= sc;
    }
    return w;
}

std::vector<float> render_frame(const SpeakerParams& spk, float envelope,
                                float head_phase, int h, int w) {
    double e = envelope;
    double cx = (w - 1) / 2.0 + spk.head_amp * std::sin(head_phase);
    double cy = (h - 1) / 2.0 - 0.3 * spk.head_amp * std::cos(head_phase) * e;
    double eye_ry = spk.eye_r * (1.0 - 0.65 * e);
    double mouth_ry = (spk.mouth_open_rest + spk.mouth_open_gain * e) / 2.0;

    auto inside = [](double x, double y, double ex, double ey, double rx, double ry) {
        double dx = (x - ex) / rx, dy = (y - ey) / ry;
        return dx * dx + dy * dy <= 1.0;
    };

    std::vector<float> img(static_cast<size_t>(3 * h * w));
    const int ss = 4;  // supersampling per axis
    for (int y = 0; y < h; y++) {
        for (int x = 0; x < w; x++) {
            double acc[3] = {0, 0, 0};
            for (int sy = 0; sy < ss; sy++)
                for (int sx = 0; sx < ss; sx++) {
                    double px = x + (sx + 0.5) / ss - 0.5;
                    double py = y + (sy + 0.5) / ss - 0.5;
                    const float* color = spk.bg_rgb;
                    if (inside(px, py, cx, cy, spk.face_rx, spk.face_ry)) {
                        color = spk.face_rgb;
                        if (inside(px, py, cx - spk.eye_dx, cy + spk.eye_y, spk.eye_r,
                                   eye_ry) ||
                            inside(px, py, cx + spk.eye_dx, cy + spk.eye_y, spk.eye_r,
                                   eye_ry))
                            color = spk.eye_rgb;
                        if (inside(px, py, cx, cy + spk.mouth_y, spk.mouth_rx, mouth_ry))
                            color = kMouthColor;
                    }
                    for (int c = 0; c < 3; c++) acc[c] += color[c];
                }
            for (int c = 0; c < 3; c++)
                img[static_cast<size_t>((c * h + y) * w + x)] =
                    static_cast<float>(acc[c] / (ss * ss));
        }
    }
    return img;
}

double mouth_aperture_probe(const float* frame_chw, int h, int w) {
    int first = -1, last = -1;
    for (int y = 0; y < h; y++) {
        bool hit = false;
        for (int x = 0; x < w && !hit; x++) {
            float g = frame_chw[h * w + y * w + x];
            // a strongly negative green channel occurs only for pixels
            // dominated by the mouth color
            hit = g < -0.45f;
        }
        if (hit) {
            if (first < 0) first = y;
            last = y;
        }
    }
    return first < 0 ? 0.0 : static_cast<double>(last - first + 1);
}

ClipRecord gen_clip(const SpeakerParams& spk, const std::string& label,
                    const ClipSpec& spec, Rng& rng, const std::string& id) {
    ClipRecord clip;
    clip.id = id;
    clip.speaker = spk.id;
    clip.label = label;
    clip.control = gen_control(spec.duration, label == "neutral" ? 0 : -1, rng, spec.fps);
    clip.waveform = synth_audio(clip.control, rng, spec.sample_rate);
    int frames = static_cast<int>(clip.control.envelope.size());
    clip.frames = Tensor<float>::zeros(
        {frames, spec.channels, spec.height, spec.width});
    int64_t chw = static_cast<int64_t>(spec.channels) * spec.height * spec.width;
    for (int f = 0; f < frames; f++) {
        std::vector<float> img =
            render_frame(spk, clip.control.envelope[static_cast<size_t>(f)],
                         clip.control.head_phase[static_cast<size_t>(f)], spec.height,
                         spec.width);
        std::copy(img.begin(), img.end(), clip.frames.data() + f * chw);
    }
    return clip;
}

Corpus gen_corpus(int n_speakers, int clips_per_speaker, uint64_t seed,
                  const ClipSpec& spec, int neutral_every) {
    if (n_speakers < 5)
        throw DataError("gen_corpus: need at least 5 speakers for disjoint splits");
    if (clips_per_speaker < 3)
        throw DataError("gen_corpus: need at least 3 clips per speaker");
    Corpus corpus;
    corpus.manifest.seed = seed;
    corpus.manifest.spec = spec;

    int n_test = std::max(1, static_cast<int>(std::lround(0.1 * n_speakers)));
    int n_val = std::max(1, static_cast<int>(std::lround(0.1 * n_speakers)));
    for (int s = 0; s < n_speakers; s++) {
        SpeakerParams spk = speaker_params(static_cast<uint64_t>(s), seed);
        std::string split = s < n_speakers - n_test - n_val  ? "train"
                            : s < n_speakers - n_test ? "val"
                                                      : "test";
        for (int k = 0; k < clips_per_speaker; k++) {
            Rng rng(mix_seed(seed, static_cast<uint64_t>(s), static_cast<uint64_t>(k)));
            std::string label =
                (k % neutral_every == neutral_every - 1) ? "neutral" : "laughter";
            std::string id = strcat_("spk", s, "_clip", k);
            corpus.clips.push_back(gen_clip(spk, label, spec, rng, id));
            corpus.manifest.clip_ids.push_back(id);
            corpus.manifest.clip_speakers.push_back(static_cast<uint64_t>(s));
            corpus.manifest.clip_labels.push_back(label);
            corpus.manifest.splits.push_back(split);
        }
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "clips", ec);
    if (ec) throw DataError("cannot create corpus directory: " + dir);

    nlohmann::json man;
    man["seed"] = corpus.manifest.seed;
    man["fps"] = corpus.manifest.spec.fps;
    man["sample_rate"] = corpus.manifest.spec.sample_rate;
    man["height"] = corpus.manifest.spec.height;
    man["width"] = corpus.manifest.spec.width;
    man["channels"] = corpus.manifest.spec.channels;
    man["duration"] = corpus.manifest.spec.duration;
    nlohmann::json clips = nlohmann::json::array();
    for (size_t i = 0; i < corpus.clips.size(); i++) {
        nlohmann::json c;
        c["id"] = corpus.manifest.clip_ids[i];
        c["speaker"] = corpus.manifest.clip_speakers[i];
        c["label"] = corpus.manifest.clip_labels[i];
        c["split"] = corpus.manifest.splits[i];
        c["frames"] = corpus.clips[i].frames.dim(0);
        clips.push_back(c);
    }
    man["clips"] = clips;
    write_text_file((fs::path(dir) / "manifest.json").string(), man.dump(2) + "\n");

    for (size_t i = 0; i < corpus.clips.size(); i++) {
        const ClipRecord& clip = corpus.clips[i];
        fs::path cdir = fs::path(dir) / "clips" / clip.id;
        fs::create_directories(cdir, ec);
        if (ec) throw DataError("cannot create clip directory: " + cdir.string());
        write_wav((cdir / "audio.wav").string(), clip.waveform);
        std::ofstream fb((cdir / "frames.bin").string(), std::ios::binary);
        if (!fb) throw DataError("cannot write frames.bin for " + clip.id);
        write_tensor(fb, clip.frames);

        nlohmann::json ctl;
        ctl["id"] = clip.id;
        ctl["speaker"] = clip.speaker;
        ctl["label"] = clip.label;
        ctl["fps"] = clip.control.fps;
        ctl["envelope"] = clip.control.envelope;
        ctl["head_phase"] = clip.control.head_phase;
        write_text_file((cdir / "control.json").string(), ctl.dump(2) + "\n");
    }
}

Corpus load_corpus(const std::string& dir) {
    namespace fs = std::filesystem;
    nlohmann::json man;
    try {
        man = nlohmann::json::parse(read_text_file((fs::path(dir) / "manifest.json").string()));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(strcat_("corrupt corpus manifest in ", dir, ": ", e.what()));
    }
    Corpus corpus;
    try {
        corpus.manifest.seed = man.at("seed").get<uint64_t>();
        corpus.manifest.spec.fps = man.at("fps").get<int>();
        corpus.manifest.spec.sample_rate = man.at("sample_rate").get<int>();
        corpus.manifest.spec.height = man.at("height").get<int>();
        corpus.manifest.spec.width = man.at("width").get<int>();
        corpus.manifest.spec.channels = man.at("channels").get<int>();
        corpus.manifest.spec.duration = man.at("duration").get<double>();
        for (const auto& c : man.at("clips")) {
            ClipRecord clip;
            clip.id = c.at("id").get<std::string>();
            clip.speaker = c.at("speaker").get<uint64_t>();
            clip.label = c.at("label").get<std::string>();
            corpus.manifest.clip_ids.push_back(clip.id);
            corpus.manifest.clip_speakers.push_back(clip.speaker);
            corpus.manifest.clip_labels.push_back(clip.label);
            corpus.manifest.splits.push_back(c.at("split").get<std::string>());

            fs::path cdir = fs::path(dir) / "clips" / clip.id;
            clip.waveform = read_wav((cdir / "audio.wav").string());
            std::ifstream fb((cdir / "frames.bin").string(), std::ios::binary);
            if (!fb) throw DataError("missing frames.bin for " + clip.id);
            clip.frames = read_tensor<float>(fb);

            nlohmann::json ctl =
                nlohmann::json::parse(read_text_file((cdir / "control.json").string()));
            clip.control.fps = ctl.at("fps").get<int>();
            clip.control.envelope = ctl.at("envelope").get<std::vector<float>>();
            clip.control.head_phase = ctl.at("head_phase").get<std::vector<float>>();
            corpus.clips.push_back(std::move(clip));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(strcat_("corrupt corpus in ", dir, ": ", e.what()));
    }
    return corpus;
}

}  // namespace lvd
