#pragma once

#include <string>
#include <vector>

#include "lvd/nn.hpp"
#include "lvd/synthdata.hpp"
#include "lvd/tensor.hpp"

namespace lvd {

// ---------------------------------------------------------------------------
// SSIM: 11x11 Gaussian window (sigma 1.5), C1=(0.01)^2, C2=(0.03)^2 on unit
// dynamic range, valid-window mean over positions and channels. Inputs are
// CHW in [-1,1] and rescaled to [0,1] internally.
double ssim(const float* a, const float* b, int64_t c, int64_t h, int64_t w);

// per-frame SSIM of two videos [F,C,H,W], returned mean and std
struct SsimStats {
    double mean = 0, stdev = 0;
    std::vector<double> per_frame;
};
SsimStats ssim_video(const Tensor<float>& a, const Tensor<float>& b);

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits of two embedding sets.
struct EmbeddingSet {
    int64_t n = 0, d = 0;
    std::vector<double> feats;  // row-major [n, d]
};

// |mu1-mu2|^2 + tr(S1 + S2 - 2 sqrtm(S1 S2)); matrix square roots via
// symmetric eigendecomposition with negative eigenvalues clipped; a small
// diagonal shrinkage is applied only when a set is rank-deficient (n <= d)
double frechet(const EmbeddingSet& a, const EmbeddingSet& b);

// deterministic hand-crafted clip embedding: per-frame per-channel mean and
// std, flow-magnitude summary statistics, temporal-difference energy in the
// four spatial quadrants
std::vector<double> clip_embed(const Tensor<float>& video);

// ---------------------------------------------------------------------------
// Horn-Schunck optical flow (alpha=1, 100 iterations, grayscale).
void horn_schunck(const std::vector<float>& prev, const std::vector<float>& next,
                  int64_t h, int64_t w, std::vector<float>& u, std::vector<float>& v,
                  double alpha = 1.0, int iters = 100);

// per-pixel flow magnitude averaged over consecutive frame pairs, [h*w]
std::vector<float> flow_magnitude(const Tensor<float>& video);

// mean of flow_magnitude over several videos
std::vector<float> flow_magnitude_mean(const std::vector<Tensor<float>>& videos);

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b);

// ---------------------------------------------------------------------------
// Audio-visual synchrony: Pearson correlation between per-frame audio RMS
// and the mouth-aperture probe of the frames.
double pearson(const std::vector<double>& a, const std::vector<double>& b);
std::vector<double> frame_rms(const Waveform& audio, int64_t frames);
double av_sync(const Tensor<float>& video, const Waveform& audio);

// ---------------------------------------------------------------------------
// Laughter-classifier analog: a small spatio-temporal convolutional network
// trained on ground-truth clips; generated videos are scored as the
// fraction classified as laughter.
struct LaughterClassifier {
    ParamStore<float> params;
    // layer shapes are fixed; weights live in the store
    int64_t c1 = 12, c2 = 24, c3 = 32;
    int64_t height = 32, width = 32, frames = 16;

    Tensor<float> logits(Tape<float>& tp, Tensor<float> video) const;  // [B,2]
};

struct LcOptions {
    int steps = 400;
    int batch = 8;
    double lr = 3e-4;
    uint64_t seed = 7;
    bool shuffle_labels = false;  // chance-level control
};

// window selection for classification: laughter clips use the 16 frames
// around the envelope peak, neutral clips the head of the clip
int64_t classification_window_start(const ClipRecord& clip, int window);

LaughterClassifier train_lc(const Corpus& corpus, const LcOptions& opt = {});

// accuracy (%) on ground-truth clips of the given split
double lc_accuracy(const LaughterClassifier& lc, const Corpus& corpus,
                   const std::string& split);

// fraction (%) of videos classified as laughter; videos are [F,C,H,W]
double lc_score(const LaughterClassifier& lc, const std::vector<Tensor<float>>& videos);

// ---------------------------------------------------------------------------
struct MetricReport {
    double ssim_mean = 0, ssim_std = 0;
    double frechet_value = 0;
    double lc_accuracy_gt = 0;
    double lc_score_gen = 0;
    double av_sync_r = 0;
    double av_sync_shuffled = 0;
    double flow_cosine = 0;
    double ssim_static_baseline = 0;
};

// flat key = value text
void write_report(const std::string& path, const MetricReport& r);

// [1,C,F,H,W] -> [F,C,H,W]
Tensor<float> video_to_frames(const Tensor<float>& video);

}  // namespace lvd
