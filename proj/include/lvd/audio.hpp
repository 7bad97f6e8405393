#pragma once

#include <vector>

#include "lvd/io.hpp"
#include "lvd/nn.hpp"

namespace lvd {

// Fixed mel featurizer settings: 16 kHz audio at 25 fps gives 640-sample
// chunks, windowed at 400/160 so every chunk yields the same number of
// short-time frames.
struct MelSpec {
    int sample_rate = 16000;
    int fps = 25;
    int win = 400;
    int hop = 160;
    int n_fft = 512;
    int n_mels = 40;
    double fmin = 0.0;
    double fmax = 8000.0;

    int chunk_len() const { return sample_rate / fps; }
    int frames_per_chunk() const { return (chunk_len() - win) / hop + 1; }
    int feat_dim() const { return frames_per_chunk() * n_mels; }
};

// chunk i covers samples [i*chunk_len, (i+1)*chunk_len); the waveform is
// zero-padded at the tail to frames*chunk_len
std::vector<std::vector<float>> chunk_waveform(const Waveform& w, int64_t frames,
                                               const MelSpec& spec = {});

// triangular filters on the HTK mel scale, rows [n_mels x (n_fft/2+1)]
std::vector<double> mel_filterbank(const MelSpec& spec);

// one chunk -> windowed magnitude STFT -> mel filterbank -> log(1+x),
// flattened time-major: [frames_per_chunk x n_mels]
std::vector<float> mel_chunk_features(const std::vector<float>& chunk,
                                      const MelSpec& spec = {});

// pre-log filterbank outputs of one chunk (for monotonicity / tone checks)
std::vector<double> mel_chunk_energies(const std::vector<float>& chunk,
                                       const MelSpec& spec = {});

// whole-waveform feature matrix, row-major [frames x feat_dim]
std::vector<float> mel_sequence(const Waveform& w, int64_t frames,
                                const MelSpec& spec = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Learnable projection shared across frames; the filterbank part is fixed.
template <typename S>
struct AudioEncoder {
    MelSpec spec;
    Linear<S> proj;

    static AudioEncoder create(ParamStore<S>& ps, const std::string& prefix,
                               int64_t embed_dim, Rng& rng, MelSpec spec = {}) {
        AudioEncoder e;
        e.spec = spec;
        e.proj = Linear<S>::create(ps, prefix + ".proj", spec.feat_dim(), embed_dim, rng);
        return e;
    }

    // fixed mel features [B,F,feat_dim] -> embeddings [B,F,embed_dim]
    Tensor<S> encode(Tape<S>& tp, Tensor<S> mel_feats) const {
        return proj(tp, mel_feats);
    }
};

// constant feature tensor for a batch of waveforms, [B, frames, feat_dim]
template <typename S>
Tensor<S> mel_tensor(const std::vector<Waveform>& ws, int64_t frames,
                     const MelSpec& spec = {}) {
    int64_t fd = spec.feat_dim();
    Tensor<S> out = Tensor<S>::zeros({static_cast<int64_t>(ws.size()), frames, fd});
    for (size_t b = 0; b < ws.size(); b++) {
        std::vector<float> m = mel_sequence(ws[b], frames, spec);
        for (int64_t i = 0; i < frames * fd; i++)
            out.data()[static_cast<int64_t>(b) * frames * fd + i] =
                static_cast<S>(m[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace lvd
