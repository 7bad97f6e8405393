#include "lvd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "lvd/ops.hpp"
#include "lvd/trainer.hpp"

namespace lvd {

namespace {

// 11x11 gaussian, sigma 1.5, normalized
std::vector<double> ssim_window() {
    std::vector<double> w(121);
    double sum = 0;
    for (int y = 0; y < 11; y++)
        for (int x = 0; x < 11; x++) {
            double dy = y - 5, dx = x - 5;
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
            w[static_cast<size_t>(y * 11 + x)] = v;
            sum += v;
        }
    for (auto& v : w) v /= sum;
    return w;
}

}  // namespace

double ssim(const float* a, const float* b, int64_t c, int64_t h, int64_t w) {
    if (h < 11 || w < 11) throw ShapeError("ssim: images must be at least 11x11");
    static const std::vector<double> win = ssim_window();
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0;
    int64_t count = 0;
    for (int64_t ch = 0; ch < c; ch++) {
        const float* pa = a + ch * h * w;
        const float* pb = b + ch * h * w;
        for (int64_t y = 0; y + 11 <= h; y++)
            for (int64_t x = 0; x + 11 <= w; x++) {
                double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
                for (int64_t i = 0; i < 11; i++)
                    for (int64_t j = 0; j < 11; j++) {
                        double wv = win[static_cast<size_t>(i * 11 + j)];
                        double va = (pa[(y + i) * w + x + j] + 1.0) * 0.5;
                        double vb = (pb[(y + i) * w + x + j] + 1.0) * 0.5;
                        mu1 += wv * va;
                        mu2 += wv * vb;
                        m11 += wv * va * va;
                        m22 += wv * vb * vb;
                        m12 += wv * va * vb;
                    }
                double s11 = m11 - mu1 * mu1;
                double s22 = m22 - mu2 * mu2;
                double s12 = m12 - mu1 * mu2;
                double num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2);
                double den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2);
                total += num / den;
                count++;
            }
    }
    return total / static_cast<double>(count);
}

SsimStats ssim_video(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape())
        throw ShapeError(strcat_("ssim_video: shape mismatch ", shape_str(a.shape()),
                                 " vs ", shape_str(b.shape())));
    int64_t f = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    SsimStats st;
    for (int64_t i = 0; i < f; i++)
        st.per_frame.push_back(
            ssim(a.data() + i * c * h * w, b.data() + i * c * h * w, c, h, w));
    double mean = 0;
    for (double v : st.per_frame) mean += v;
    mean /= static_cast<double>(f);
    double var = 0;
    for (double v : st.per_frame) var += (v - mean) * (v - mean);
    st.mean = mean;
    st.stdev = std::sqrt(var / static_cast<double>(f));
    return st;
}

// ---------------------------------------------------------------------------
// symmetric Jacobi eigendecomposition; a is row-major [n,n], destroyed.
// eigenvectors returned column-major in v.

namespace {

void jacobi_eig(std::vector<double>& a, int64_t n, std::vector<double>& eigvals,
                std::vector<double>& v) {
    v.assign(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; i++) v[static_cast<size_t>(i * n + i)] = 1.0;
    for (int sweep = 0; sweep < 60; sweep++) {
        double off = 0;
        for (int64_t i = 0; i < n; i++)
            for (int64_t j = i + 1; j < n; j++)
                off += a[static_cast<size_t>(i * n + j)] * a[static_cast<size_t>(i * n + j)];
        if (off < 1e-22) break;
        for (int64_t p = 0; p < n; p++)
            for (int64_t q = p + 1; q < n; q++) {
                double apq = a[static_cast<size_t>(p * n + q)];
                if (std::abs(apq) < 1e-300) continue;
                double app = a[static_cast<size_t>(p * n + p)];
                double aqq = a[static_cast<size_t>(q * n + q)];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double cs = 1.0 / std::sqrt(t * t + 1.0);
                double sn = t * cs;
                for (int64_t k = 0; k < n; k++) {
                    double akp = a[static_cast<size_t>(k * n + p)];
                    double akq = a[static_cast<size_t>(k * n + q)];
                    a[static_cast<size_t>(k * n + p)] = cs * akp - sn * akq;
                    a[static_cast<size_t>(k * n + q)] = sn * akp + cs * akq;
                }
                for (int64_t k = 0; k < n; k++) {
                    double apk = a[static_cast<size_t>(p * n + k)];
                    double aqk = a[static_cast<size_t>(q * n + k)];
                    a[static_cast<size_t>(p * n + k)] = cs * apk - sn * aqk;
                    a[static_cast<size_t>(q * n + k)] = sn * apk + cs * aqk;
                }
                for (int64_t k = 0; k < n; k++) {
                    double vkp = v[static_cast<size_t>(k * n + p)];
                    double vkq = v[static_cast<size_t>(k * n + q)];
                    v[static_cast<size_t>(k * n + p)] = cs * vkp - sn * vkq;
                    v[static_cast<size_t>(k * n + q)] = sn * vkp + cs * vkq;
                }
            }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; i++) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i * n + i)];
}

// B = U f(L) U^T for symmetric input
std::vector<double> sym_func(const std::vector<double>& m, int64_t n,
                             double (*fn)(double)) {
    std::vector<double> a = m, eigvals, v;
    jacobi_eig(a, n, eigvals, v);
    std::vector<double> out(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; i++)
        for (int64_t j = 0; j < n; j++) {
            double acc = 0;
            for (int64_t k = 0; k < n; k++)
                acc += v[static_cast<size_t>(i * n + k)] * fn(eigvals[static_cast<size_t>(k)]) *
                       v[static_cast<size_t>(j * n + k)];
            out[static_cast<size_t>(i * n + j)] = acc;
        }
    return out;
}

double sqrt_clip(double x) { return x > 0 ? std::sqrt(x) : 0.0; }

void mean_cov(const EmbeddingSet& e, std::vector<double>& mu,
              std::vector<double>& cov) {
    int64_t n = e.n, d = e.d;
    mu.assign(static_cast<size_t>(d), 0.0);
    for (int64_t i = 0; i < n; i++)
        for (int64_t j = 0; j < d; j++)
            mu[static_cast<size_t>(j)] += e.feats[static_cast<size_t>(i * d + j)];
    for (auto& v : mu) v /= static_cast<double>(n);
    cov.assign(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < n; i++)
        for (int64_t j = 0; j < d; j++) {
            double xj = e.feats[static_cast<size_t>(i * d + j)] - mu[static_cast<size_t>(j)];
            for (int64_t k = j; k < d; k++) {
                double xk = e.feats[static_cast<size_t>(i * d + k)] - mu[static_cast<size_t>(k)];
                cov[static_cast<size_t>(j * d + k)] += xj * xk;
            }
        }
    double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (int64_t j = 0; j < d; j++)
        for (int64_t k = j; k < d; k++) {
            cov[static_cast<size_t>(j * d + k)] /= denom;
            cov[static_cast<size_t>(k * d + j)] = cov[static_cast<size_t>(j * d + k)];
        }
}

}  // namespace

double frechet(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.d != b.d) throw ShapeError("frechet: embedding dimensions differ");
    if (a.n < 2 || b.n < 2) throw ShapeError("frechet: need at least 2 samples per set");
    for (double v : a.feats)
        if (!std::isfinite(v)) throw NumericError("frechet: non-finite feature");
    for (double v : b.feats)
        if (!std::isfinite(v)) throw NumericError("frechet: non-finite feature");
    int64_t d = a.d;
    std::vector<double> mu1, mu2, s1, s2;
    mean_cov(a, mu1, s1);
    mean_cov(b, mu2, s2);

    // shrinkage keeps the square roots well-defined for rank-deficient fits
    auto shrink = [&](std::vector<double>& s, int64_t n) {
        if (n > d) return;
        double tr = 0;
        for (int64_t i = 0; i < d; i++) tr += s[static_cast<size_t>(i * d + i)];
        double lam = 1e-6 * std::max(1.0, tr / static_cast<double>(d));
        for (int64_t i = 0; i < d; i++) s[static_cast<size_t>(i * d + i)] += lam;
    };
    shrink(s1, a.n);
    shrink(s2, b.n);

    double dist = 0;
    for (int64_t i = 0; i < d; i++) {
        double dm = mu1[static_cast<size_t>(i)] - mu2[static_cast<size_t>(i)];
        dist += dm * dm;
    }
    // tr(sqrtm(S1 S2)) = tr(sqrtm(sqrtm(S1) S2 sqrtm(S1)))
    std::vector<double> r1 = sym_func(s1, d, sqrt_clip);
    std::vector<double> tmp(static_cast<size_t>(d * d), 0.0), m(static_cast<size_t>(d * d), 0.0);
    for (int64_t i = 0; i < d; i++)
        for (int64_t k = 0; k < d; k++) {
            double r = r1[static_cast<size_t>(i * d + k)];
            if (r == 0) continue;
            for (int64_t j = 0; j < d; j++)
                tmp[static_cast<size_t>(i * d + j)] += r * s2[static_cast<size_t>(k * d + j)];
        }
    for (int64_t i = 0; i < d; i++)
        for (int64_t k = 0; k < d; k++) {
            double r = tmp[static_cast<size_t>(i * d + k)];
            if (r == 0) continue;
            for (int64_t j = 0; j < d; j++)
                m[static_cast<size_t>(i * d + j)] += r * r1[static_cast<size_t>(k * d + j)];
        }
    // symmetrize against roundoff before the eigendecomposition
    for (int64_t i = 0; i < d; i++)
        for (int64_t j = i + 1; j < d; j++) {
            double s = 0.5 * (m[static_cast<size_t>(i * d + j)] + m[static_cast<size_t>(j * d + i)]);
            m[static_cast<size_t>(i * d + j)] = s;
            m[static_cast<size_t>(j * d + i)] = s;
        }
    std::vector<double> ma = m, eigvals, v;
    jacobi_eig(ma, d, eigvals, v);
    double tr_sqrt = 0;
    for (double ev : eigvals) tr_sqrt += ev > 0 ? std::sqrt(ev) : 0.0;

    double tr1 = 0, tr2 = 0;
    for (int64_t i = 0; i < d; i++) {
        tr1 += s1[static_cast<size_t>(i * d + i)];
        tr2 += s2[static_cast<size_t>(i * d + i)];
    }
    return dist + tr1 + tr2 - 2.0 * tr_sqrt;
}

// ---------------------------------------------------------------------------

std::vector<double> clip_embed(const Tensor<float>& video) {
    int64_t f = video.dim(0), c = video.dim(1), h = video.dim(2), w = video.dim(3);
    std::vector<double> out;
    // per-frame per-channel mean and std
    for (int64_t i = 0; i < f; i++)
        for (int64_t ch = 0; ch < c; ch++) {
            const float* p = video.data() + (i * c + ch) * h * w;
            double mean = 0;
            for (int64_t k = 0; k < h * w; k++) mean += p[k];
            mean /= static_cast<double>(h * w);
            double var = 0;
            for (int64_t k = 0; k < h * w; k++) var += (p[k] - mean) * (p[k] - mean);
            out.push_back(mean);
            out.push_back(std::sqrt(var / static_cast<double>(h * w)));
        }
    // flow magnitude summary
    std::vector<float> mag = flow_magnitude(video);
    double mmean = 0, mmax = 0;
    for (float v : mag) {
        mmean += v;
        mmax = std::max(mmax, static_cast<double>(v));
    }
    mmean /= static_cast<double>(mag.size());
    double mvar = 0;
    for (float v : mag) mvar += (v - mmean) * (v - mmean);
    out.push_back(mmean);
    out.push_back(std::sqrt(mvar / static_cast<double>(mag.size())));
    out.push_back(mmax);
    // temporal-difference energy per spatial quadrant
    for (int qy = 0; qy < 2; qy++)
        for (int qx = 0; qx < 2; qx++) {
            double acc = 0;
            int64_t y0 = qy * h / 2, y1 = (qy + 1) * h / 2;
            int64_t x0 = qx * w / 2, x1 = (qx + 1) * w / 2;
            for (int64_t i = 0; i + 1 < f; i++)
                for (int64_t ch = 0; ch < c; ch++) {
                    const float* p0 = video.data() + (i * c + ch) * h * w;
                    const float* p1 = video.data() + ((i + 1) * c + ch) * h * w;
                    for (int64_t y = y0; y < y1; y++)
                        for (int64_t x = x0; x < x1; x++) {
                            double dd = p1[y * w + x] - p0[y * w + x];
                            acc += dd * dd;
                        }
                }
            out.push_back(acc / static_cast<double>(std::max<int64_t>(1, (f - 1) * c * (h / 2) * (w / 2))));
        }
    return out;
}

// ---------------------------------------------------------------------------

std::vector<float> flow_magnitude_mean(const std::vector<Tensor<float>>& videos) {
    if (videos.empty()) throw DataError("flow_magnitude_mean: no videos");
    std::vector<float> acc;
    for (const auto& v : videos) {
        std::vector<float> m = flow_magnitude(v);
        if (acc.empty())
            acc = m;
        else {
            if (acc.size() != m.size()) throw ShapeError("flow maps differ in size");
            for (size_t i = 0; i < m.size(); i++) acc[i] += m[i];
        }
    }
    for (auto& v : acc) v /= static_cast<float>(videos.size());
    return acc;
}

double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: size mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); i++) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) throw NumericError("cosine_similarity: zero vector");
    return dot / std::sqrt(na * nb);
}

// ---------------------------------------------------------------------------

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ShapeError("pearson: need two equal series of length >= 2");
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); i++) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(a.size());
    double saa = 0, sbb = 0, sab = 0;
    for (size_t i = 0; i < a.size(); i++) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    if (saa <= 0 || sbb <= 0)
        throw NumericError("pearson: zero-variance series, correlation undefined");
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> frame_rms(const Waveform& audio, int64_t frames) {
    int64_t spf = audio.sample_rate / 25;
    std::vector<double> out(static_cast<size_t>(frames), 0.0);
    for (int64_t f = 0; f < frames; f++) {
        double acc = 0;
        for (int64_t k = 0; k < spf; k++) {
            int64_t s = f * spf + k;
            double v = s < static_cast<int64_t>(audio.samples.size())
                           ? audio.samples[static_cast<size_t>(s)]
                           : 0.0;
            acc += v * v;
        }
        out[static_cast<size_t>(f)] = std::sqrt(acc / static_cast<double>(spf));
    }
    return out;
}

double av_sync(const Tensor<float>& video, const Waveform& audio) {
    int64_t f = video.dim(0), c = video.dim(1), h = video.dim(2), w = video.dim(3);
    (void)c;
    std::vector<double> rms = frame_rms(audio, f);
    std::vector<double> aperture(static_cast<size_t>(f));
    for (int64_t i = 0; i < f; i++)
        aperture[static_cast<size_t>(i)] = mouth_aperture_probe(
            video.data() + i * video.dim(1) * h * w, static_cast<int>(h),
            static_cast<int>(w));
    return pearson(rms, aperture);
}

// ---------------------------------------------------------------------------
// laughter classifier

namespace {

struct LcLayers {
    Conv2dLayer<float> conv1, conv2, conv3;
    TemporalConv<float> t1, t2, t3;
    Linear<float> head;
};

LcLayers lc_layers(LaughterClassifier& lc, Rng& rng) {
    LcLayers l;
    l.conv1 = Conv2dLayer<float>::create(lc.params, "c1", 3, lc.c1, 3, rng);
    l.t1 = TemporalConv<float>::create(lc.params, "t1", lc.c1, 3);
    l.conv2 = Conv2dLayer<float>::create(lc.params, "c2", lc.c1, lc.c2, 3, rng);
    l.t2 = TemporalConv<float>::create(lc.params, "t2", lc.c2, 3);
    l.conv3 = Conv2dLayer<float>::create(lc.params, "c3", lc.c2, lc.c3, 3, rng);
    l.t3 = TemporalConv<float>::create(lc.params, "t3", lc.c3, 3);
    l.head = Linear<float>::create(lc.params, "head", lc.c3, 2, rng);
    return l;
}

// rebuild layer views over an existing parameter store
LcLayers lc_views(const LaughterClassifier& lc) {
    LcLayers l;
    auto& ps = const_cast<LaughterClassifier&>(lc).params;
    auto get = [&](const char* n) { return *ps.find(n); };
    l.conv1 = {get("c1.w"), get("c1.b")};
    l.t1 = {get("t1.w")};
    l.conv2 = {get("c2.w"), get("c2.b")};
    l.t2 = {get("t2.w")};
    l.conv3 = {get("c3.w"), get("c3.b")};
    l.t3 = {get("t3.w")};
    l.head = {get("head.w"), get("head.b")};
    return l;
}

}  // namespace

Tensor<float> LaughterClassifier::logits(Tape<float>& tp, Tensor<float> video) const {
    LcLayers l = lc_views(*this);
    int64_t b = video.dim(0);
    Tensor<float> h = fold_frames(tp, video);
    h = silu(tp, group_norm(tp, l.conv1(tp, h), 4));
    h = avg_pool2d(tp, h);
    h = apply_temporal(tp, h, l.t1, b);
    h = silu(tp, group_norm(tp, l.conv2(tp, h), 4));
    h = avg_pool2d(tp, h);
    h = apply_temporal(tp, h, l.t2, b);
    h = silu(tp, group_norm(tp, l.conv3(tp, h), 4));
    h = avg_pool2d(tp, h);
    h = apply_temporal(tp, h, l.t3, b);
    // global mean pool over frames and space, per (batch, channel)
    Tensor<float> flat = unfold_frames(tp, h, b);  // [B,C,F,H,W]
    int64_t c = flat.dim(1);
    Tensor<float> feat =
        mean_per_sample(tp, flat.reshaped({b * c, flat.dim(2) * flat.dim(3) * flat.dim(4)}))
            .reshaped({b, c});
    return l.head(tp, feat);
}

int64_t classification_window_start(const ClipRecord& clip, int window) {
    int64_t total = clip.frames.dim(0);
    if (total <= window) return 0;
    if (clip.label == "neutral") return 0;
    int64_t peak = 0;
    for (size_t i = 0; i < clip.control.envelope.size(); i++)
        if (clip.control.envelope[i] > clip.control.envelope[static_cast<size_t>(peak)])
            peak = static_cast<int64_t>(i);
    return std::clamp<int64_t>(peak - window / 2, 0, total - window);
}

LaughterClassifier train_lc(const Corpus& corpus, const LcOptions& opt) {
    std::vector<int64_t> items = corpus.split_indices("train");
    bool has_laugh = false, has_neutral = false;
    for (int64_t i : items) {
        if (corpus.manifest.clip_labels[static_cast<size_t>(i)] == "laughter") has_laugh = true;
        if (corpus.manifest.clip_labels[static_cast<size_t>(i)] == "neutral") has_neutral = true;
    }
    if (!has_laugh || !has_neutral)
        throw DataError("train_lc: corpus must contain both laughter and neutral clips");

    LaughterClassifier lc;
    lc.height = corpus.manifest.spec.height;
    lc.width = corpus.manifest.spec.width;
    Rng init_rng(opt.seed);
    lc_layers(lc, init_rng);
    LionState<float> st = LionState<float>::create(lc.params);

    Rng rng(opt.seed ^ 0xabcdefULL);
    std::vector<int> labels(items.size());
    for (size_t i = 0; i < items.size(); i++)
        labels[i] = corpus.manifest.clip_labels[static_cast<size_t>(items[i])] == "laughter" ? 1 : 0;
    if (opt.shuffle_labels)
        for (size_t i = labels.size(); i > 1; i--)
            std::swap(labels[i - 1], labels[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);

    int64_t chw = corpus.manifest.spec.channels * lc.height * lc.width;
    for (int step = 0; step < opt.steps; step++) {
        Tensor<float> x = Tensor<float>::zeros(
            {opt.batch, corpus.manifest.spec.channels, lc.frames, lc.height, lc.width});
        std::vector<int> y(static_cast<size_t>(opt.batch));
        for (int64_t bi = 0; bi < opt.batch; bi++) {
            int64_t pick = rng.uniform_int(static_cast<int64_t>(items.size()));
            const ClipRecord& clip = corpus.clips[static_cast<size_t>(items[static_cast<size_t>(pick)])];
            int64_t s = classification_window_start(clip, static_cast<int>(lc.frames));
            for (int64_t fr = 0; fr < lc.frames; fr++)
                for (int64_t ch = 0; ch < corpus.manifest.spec.channels; ch++)
                    std::copy(clip.frames.data() + ((s + fr) * corpus.manifest.spec.channels + ch) * lc.height * lc.width,
                              clip.frames.data() + ((s + fr) * corpus.manifest.spec.channels + ch + 1) * lc.height * lc.width,
                              x.data() + (((bi * corpus.manifest.spec.channels + ch) * lc.frames + fr) * lc.height * lc.width));
            y[static_cast<size_t>(bi)] = labels[static_cast<size_t>(pick)];
        }
        (void)chw;
        Tape<float> tp;
        Tensor<float> lg = lc.logits(tp, x);
        Tensor<float> loss = cross_entropy_logits(tp, lg, y);
        if (!std::isfinite(loss.item()))
            throw NumericError("train_lc: non-finite loss");
        lc.params.zero_grads();
        tp.backward(loss);
        lion_step(lc.params, st, opt.lr);
    }
    return lc;
}

namespace {

int lc_predict(const LaughterClassifier& lc, const Tensor<float>& frames_chw) {
    // frames_chw: [F,C,H,W] -> [1,C,F,H,W]
    int64_t f = frames_chw.dim(0), c = frames_chw.dim(1), h = frames_chw.dim(2),
            w = frames_chw.dim(3);
    Tensor<float> x = Tensor<float>::zeros({1, c, f, h, w});
    for (int64_t fr = 0; fr < f; fr++)
        for (int64_t ch = 0; ch < c; ch++)
            std::copy(frames_chw.data() + (fr * c + ch) * h * w,
                      frames_chw.data() + (fr * c + ch + 1) * h * w,
                      x.data() + ((ch * f + fr) * h * w));
    Tape<float> tp;
    tp.set_recording(false);
    Tensor<float> lg = const_cast<LaughterClassifier&>(lc).logits(tp, x);
    return lg.data()[1] > lg.data()[0] ? 1 : 0;
}

}  // namespace

double lc_accuracy(const LaughterClassifier& lc, const Corpus& corpus,
                   const std::string& split) {
    std::vector<int64_t> items = corpus.split_indices(split);
    if (items.empty()) throw DataError("lc_accuracy: empty split " + split);
    int correct = 0;
    for (int64_t i : items) {
        const ClipRecord& clip = corpus.clips[static_cast<size_t>(i)];
        int64_t s = classification_window_start(clip, static_cast<int>(lc.frames));
        int64_t c = clip.frames.dim(1), h = clip.frames.dim(2), w = clip.frames.dim(3);
        Tensor<float> win = Tensor<float>::zeros({lc.frames, c, h, w});
        std::copy(clip.frames.data() + s * c * h * w,
                  clip.frames.data() + (s + lc.frames) * c * h * w, win.data());
        int pred = lc_predict(lc, win);
        int truth = clip.label == "laughter" ? 1 : 0;
        if (pred == truth) correct++;
    }
    return 100.0 * correct / static_cast<double>(items.size());
}

double lc_score(const LaughterClassifier& lc, const std::vector<Tensor<float>>& videos) {
    if (videos.empty()) throw DataError("lc_score: no videos");
    int laugh = 0;
    for (const auto& v : videos)
        if (lc_predict(lc, v) == 1) laugh++;
    return 100.0 * laugh / static_cast<double>(videos.size());
}

// ---------------------------------------------------------------------------

void write_report(const std::string& path, const MetricReport& r) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write report: " + path);
    os << "ssim = " << r.ssim_mean << "\n";
    os << "ssim_std = " << r.ssim_std << "\n";
    os << "ssim_static_baseline = " << r.ssim_static_baseline << "\n";
    os << "frechet = " << r.frechet_value << "\n";
    os << "lc_accuracy = " << r.lc_accuracy_gt << "\n";
    os << "lc_score = " << r.lc_score_gen << "\n";
    os << "av_sync = " << r.av_sync_r << "\n";
    os << "av_sync_shuffled = " << r.av_sync_shuffled << "\n";
    os << "flow_cosine = " << r.flow_cosine << "\n";
}

Tensor<float> video_to_frames(const Tensor<float>& video) {
    int64_t c = video.dim(1), f = video.dim(2), h = video.dim(3), w = video.dim(4);
    Tensor<float> out = Tensor<float>::zeros({f, c, h, w});
    for (int64_t fr = 0; fr < f; fr++)
        for (int64_t ch = 0; ch < c; ch++)
            std::copy(video.data() + (ch * f + fr) * h * w,
                      video.data() + (ch * f + fr + 1) * h * w,
                      out.data() + (fr * c + ch) * h * w);
    return out;
}

}  // namespace lvd
