#pragma once

#include <string>
#include <vector>

#include "lvd/io.hpp"
#include "lvd/tensor.hpp"

namespace lvd {

// Per-frame control signal that drives both the waveform and the face:
// a burst envelope in [0,1] (zero at frame 0, the neutral start) and a
// low-frequency head-bob angle scaled by the envelope.
struct ControlSignal {
    std::vector<float> envelope;
    std::vector<float> head_phase;
    std::vector<double> burst_centers;  // seconds
    std::vector<double> burst_widths;
    int fps = 25;
};

struct SpeakerParams {
    uint64_t id = 0;
    float face_rgb[3] = {0.7f, 0.4f, 0.1f};
    float eye_rgb[3] = {-0.65f, -0.65f, -0.1f};
    float bg_rgb[3] = {-0.75f, -0.7f, -0.65f};
    double face_rx = 11.0, face_ry = 12.0;  // pixels at 32x32
    double eye_dx = 4.0, eye_y = -4.5, eye_r = 1.7;
    double mouth_y = 5.5, mouth_rx = 4.0;
    double mouth_open_rest = 2.5, mouth_open_gain = 6.0;  // aperture a0 + a1*e
    double head_amp = 1.2;
};

// mouth interior color, identical for every speaker so probes need no
// per-speaker information
constexpr float kMouthColor[3] = {0.25f, -0.88f, -0.82f};

struct ClipSpec {
    int height = 32, width = 32, channels = 3;
    double duration = 2.0;  // seconds
    int fps = 25;
    int sample_rate = 16000;
};

struct ClipRecord {
    std::string id;
    uint64_t speaker = 0;
    std::string label;  // "laughter" | "neutral"
    Waveform waveform;
    Tensor<float> frames;  // [F,C,H,W] in [-1,1]
    ControlSignal control;
};

struct CorpusManifest {
    uint64_t seed = 0;
    ClipSpec spec;
    std::vector<std::string> clip_ids;
    std::vector<uint64_t> clip_speakers;
    std::vector<std::string> clip_labels;
    std::vector<std::string> splits;  // parallel: "train" | "val" | "test"
};

struct Corpus {
    CorpusManifest manifest;
    std::vector<ClipRecord> clips;  // parallel to manifest.clip_ids

    std::vector<int64_t> split_indices(const std::string& split) const {
        std::vector<int64_t> out;
        for (size_t i = 0; i < manifest.splits.size(); i++)
            if (manifest.splits[i] == split) out.push_back(static_cast<int64_t>(i));
        return out;
    }
};

SpeakerParams speaker_params(uint64_t speaker_id, uint64_t corpus_seed);

// raised-cosine bump of the given width accumulated into the envelope
void add_burst(std::vector<float>& envelope, int fps, double center, double width,
               double amp);

// n_bursts < 0 samples 1..4 bursts; 0 gives the neutral (all-zero) envelope
ControlSignal gen_control(double duration, int n_bursts, Rng& rng, int fps = 25);

Waveform synth_audio(const ControlSignal& control, Rng& rng, int sample_rate = 16000);

// anti-aliased sprite face, CHW in [-1,1]
std::vector<float> render_frame(const SpeakerParams& spk, float envelope,
                                float head_phase, int h, int w);

// vertical extent (rows) of the mouth-colored region; monotone in the
// envelope by construction
double mouth_aperture_probe(const float* frame_chw, int h, int w);

ClipRecord gen_clip(const SpeakerParams& spk, const std::string& label,
                    const ClipSpec& spec, Rng& rng, const std::string& id);

// deterministic from seed; speaker-disjoint splits; every speaker has both
// laughter and neutral clips (every neutral_every-th clip is neutral)
Corpus gen_corpus(int n_speakers, int clips_per_speaker, uint64_t seed,
                  const ClipSpec& spec = {}, int neutral_every = 3);

void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

}  // namespace lvd
