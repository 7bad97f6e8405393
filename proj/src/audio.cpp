#include "lvd/audio.hpp"

#include <cmath>
#include <complex>

namespace lvd {

namespace {

constexpr double kPi = 3.14159265358979323846;

// iterative radix-2 FFT, in place
void fft(std::vector<std::complex<double>>& a) {
    size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; i++) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = -2.0 * kPi / static_cast<double>(len);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t j = 0; j < len / 2; j++) {
                std::complex<double> u = a[i + j];
                std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; i++)
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<float>> chunk_waveform(const Waveform& w, int64_t frames,
                                               const MelSpec& spec) {
    if (frames <= 0) throw DataError("chunk_waveform: frame count must be positive");
    int64_t clen = spec.chunk_len();
    std::vector<std::vector<float>> chunks(static_cast<size_t>(frames));
    for (int64_t i = 0; i < frames; i++) {
        std::vector<float>& c = chunks[static_cast<size_t>(i)];
        c.assign(static_cast<size_t>(clen), 0.0f);
        for (int64_t k = 0; k < clen; k++) {
            int64_t s = i * clen + k;
            if (s < static_cast<int64_t>(w.samples.size()))
                c[static_cast<size_t>(k)] = w.samples[static_cast<size_t>(s)];
        }
    }
    return chunks;
}

std::vector<double> mel_filterbank(const MelSpec& spec) {
    int bins = spec.n_fft / 2 + 1;
    std::vector<double> fb(static_cast<size_t>(spec.n_mels * bins), 0.0);
    double mel_lo = hz_to_mel(spec.fmin);
    double mel_hi = hz_to_mel(spec.fmax);
    std::vector<double> centers(static_cast<size_t>(spec.n_mels + 2));
    for (int i = 0; i < spec.n_mels + 2; i++)
        centers[static_cast<size_t>(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (spec.n_mels + 1));
    for (int m = 0; m < spec.n_mels; m++) {
        double f0 = centers[static_cast<size_t>(m)];
        double f1 = centers[static_cast<size_t>(m + 1)];
        double f2 = centers[static_cast<size_t>(m + 2)];
        for (int k = 0; k < bins; k++) {
            double fk = static_cast<double>(k) * spec.sample_rate / spec.n_fft;
            double v = 0.0;
            if (fk > f0 && fk < f1)
                v = (fk - f0) / (f1 - f0);
            else if (fk >= f1 && fk < f2)
                v = (f2 - fk) / (f2 - f1);
            fb[static_cast<size_t>(m * bins + k)] = v;
        }
    }
    return fb;
}

std::vector<double> mel_chunk_energies(const std::vector<float>& chunk,
                                       const MelSpec& spec) {
    for (float v : chunk)
        if (!std::isfinite(v)) throw NumericError("mel features: non-finite sample");
    int fpc = spec.frames_per_chunk();
    int bins = spec.n_fft / 2 + 1;
    static thread_local std::vector<double> fb;
    static thread_local std::vector<double> win;
    if (fb.size() != static_cast<size_t>(spec.n_mels * bins)) fb = mel_filterbank(spec);
    if (win.size() != static_cast<size_t>(spec.win)) win = hann_window(spec.win);

    std::vector<double> out(static_cast<size_t>(fpc * spec.n_mels), 0.0);
    std::vector<std::complex<double>> buf(static_cast<size_t>(spec.n_fft));
    for (int t = 0; t < fpc; t++) {
        int off = t * spec.hop;
        for (int i = 0; i < spec.n_fft; i++) {
            double v = 0.0;
            if (i < spec.win && off + i < static_cast<int>(chunk.size()))
                v = static_cast<double>(chunk[static_cast<size_t>(off + i)]) *
                    win[static_cast<size_t>(i)];
            buf[static_cast<size_t>(i)] = {v, 0.0};
        }
        fft(buf);
        for (int m = 0; m < spec.n_mels; m++) {
            double acc = 0.0;
            const double* row = fb.data() + m * bins;
            for (int k = 0; k < bins; k++) acc += row[k] * std::abs(buf[static_cast<size_t>(k)]);
            out[static_cast<size_t>(t * spec.n_mels + m)] = acc;
        }
    }
    return out;
}

std::vector<float> mel_chunk_features(const std::vector<float>& chunk,
                                      const MelSpec& spec) {
    std::vector<double> e = mel_chunk_energies(chunk, spec);
    std::vector<float> out(e.size());
    for (size_t i = 0; i < e.size(); i++)
        out[i] = static_cast<float>(std::log1p(e[i]));
    return out;
}

std::vector<float> mel_sequence(const Waveform& w, int64_t frames,
                                const MelSpec& spec) {
    if (w.sample_rate != spec.sample_rate)
        throw DataError(strcat_("expected ", spec.sample_rate, " Hz audio, got ",
                                w.sample_rate, " Hz (resampling not supported)"));
    auto chunks = chunk_waveform(w, frames, spec);
    int64_t fd = spec.feat_dim();
    std::vector<float> out(static_cast<size_t>(frames * fd));
    for (int64_t i = 0; i < frames; i++) {
        std::vector<float> f = mel_chunk_features(chunks[static_cast<size_t>(i)], spec);
        std::copy(f.begin(), f.end(), out.begin() + i * fd);
    }
    return out;
}

}  // namespace lvd
