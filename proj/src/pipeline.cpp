#include "lvd/pipeline.hpp"

#include <cmath>
#include <map>

#include "lvd/diffusion.hpp"

namespace lvd {

std::vector<Tensor<float>> generate_eval_windows(
    const Corpus& corpus, const std::vector<int64_t>& items,
    const std::vector<int64_t>& starts, const Denoiser<float>& model,
    const NoiseSchedule& sched, const SamplerConfig& scfg, int batch) {
    scfg.validate();
    const ClipSpec& spec = corpus.manifest.spec;
    int64_t c = spec.channels, h = spec.height, w = spec.width;
    int64_t window = model.cfg.frames;
    int64_t fd = MelSpec{}.feat_dim();
    ClipDenoiserFactory<float> factory =
        model_clip_factory<float>(model, sched, scfg.guidance);

    std::vector<Tensor<float>> out;
    Rng rng(scfg.seed);
    for (size_t off = 0; off < items.size(); off += static_cast<size_t>(batch)) {
        size_t hi = std::min(items.size(), off + static_cast<size_t>(batch));
        int64_t b = static_cast<int64_t>(hi - off);
        Tensor<float> refs = Tensor<float>::zeros({b, c, h, w});
        Tensor<float> mel = Tensor<float>::zeros({b, window, fd});
        for (int64_t i = 0; i < b; i++) {
            const ClipRecord& clip =
                corpus.clips[static_cast<size_t>(items[off + static_cast<size_t>(i)])];
            // neutral reference: the clip's first frame
            std::copy(clip.frames.data(), clip.frames.data() + c * h * w,
                      refs.data() + i * c * h * w);
            std::vector<float> m = mel_sequence(clip.waveform, clip.frames.dim(0));
            int64_t s = starts[off + static_cast<size_t>(i)];
            std::copy(m.begin() + s * fd, m.begin() + (s + window) * fd,
                      mel.data() + i * window * fd);
        }
        Tensor<float> gen =
            sample_clip(factory, refs, mel, {b, c, window, h, w}, sched, scfg.steps, rng);
        for (int64_t i = 0; i < b; i++) {
            Tensor<float> frames = Tensor<float>::zeros({window, c, h, w});
            for (int64_t ch = 0; ch < c; ch++)
                for (int64_t f = 0; f < window; f++)
                    std::copy(gen.data() + ((i * c + ch) * window + f) * h * w,
                              gen.data() + ((i * c + ch) * window + f + 1) * h * w,
                              frames.data() + (f * c + ch) * h * w);
            out.push_back(frames);
        }
    }
    return out;
}

EvalOutputs run_eval(const Corpus& corpus, const Denoiser<float>& model,
                     const NoiseSchedule& sched, const SamplerConfig& scfg,
                     int batch, const LcOptions& lc_opt) {
    EvalOutputs out;
    out.test_items = corpus.split_indices("test");
    if (out.test_items.empty()) throw DataError("run_eval: empty test split");
    const ClipSpec& spec = corpus.manifest.spec;
    int64_t c = spec.channels, h = spec.height, w = spec.width;
    int64_t window = model.cfg.frames;

    for (int64_t i : out.test_items)
        out.window_starts.push_back(classification_window_start(
            corpus.clips[static_cast<size_t>(i)], static_cast<int>(window)));

    out.generated = generate_eval_windows(corpus, out.test_items, out.window_starts,
                                          model, sched, scfg, batch);

    // ground-truth windows and the copy-reference baseline
    std::vector<Tensor<float>> gt;
    std::vector<Tensor<float>> statics;
    for (size_t k = 0; k < out.test_items.size(); k++) {
        const ClipRecord& clip =
            corpus.clips[static_cast<size_t>(out.test_items[k])];
        int64_t s = out.window_starts[k];
        Tensor<float> win = Tensor<float>::zeros({window, c, h, w});
        std::copy(clip.frames.data() + s * c * h * w,
                  clip.frames.data() + (s + window) * c * h * w, win.data());
        gt.push_back(win);
        Tensor<float> st = Tensor<float>::zeros({window, c, h, w});
        for (int64_t f = 0; f < window; f++)
            std::copy(clip.frames.data(), clip.frames.data() + c * h * w,
                      st.data() + f * c * h * w);
        statics.push_back(st);
    }

    // SSIM of generated vs ground truth, and the static baseline
    double sm = 0, sv = 0, sb = 0;
    std::vector<double> svals;
    for (size_t k = 0; k < gt.size(); k++) {
        SsimStats st = ssim_video(out.generated[k], gt[k]);
        svals.push_back(st.mean);
        sm += st.mean;
        sb += ssim_video(statics[k], gt[k]).mean;
    }
    sm /= static_cast<double>(gt.size());
    sb /= static_cast<double>(gt.size());
    for (double v : svals) sv += (v - sm) * (v - sm);
    out.report.ssim_mean = sm;
    out.report.ssim_std = std::sqrt(sv / static_cast<double>(svals.size()));
    out.report.ssim_static_baseline = sb;

    // Frechet over the hand-crafted clip embeddings
    EmbeddingSet eg, er;
    for (size_t k = 0; k < gt.size(); k++) {
        std::vector<double> a = clip_embed(gt[k]);
        std::vector<double> b = clip_embed(out.generated[k]);
        if (er.d == 0) er.d = eg.d = static_cast<int64_t>(a.size());
        er.feats.insert(er.feats.end(), a.begin(), a.end());
        eg.feats.insert(eg.feats.end(), b.begin(), b.end());
        er.n++;
        eg.n++;
    }
    out.report.frechet_value = frechet(er, eg);

    // laughter classifier: accuracy on ground truth, score on generated
    // laughter-audio videos (neutral reference frames by construction)
    LaughterClassifier lc = train_lc(corpus, lc_opt);
    out.report.lc_accuracy_gt = lc_accuracy(lc, corpus, "test");
    std::vector<Tensor<float>> gen_laugh;
    std::vector<size_t> laugh_rows;
    for (size_t k = 0; k < out.test_items.size(); k++)
        if (corpus.manifest.clip_labels[static_cast<size_t>(out.test_items[k])] ==
            "laughter") {
            gen_laugh.push_back(out.generated[k]);
            laugh_rows.push_back(k);
        }
    out.report.lc_score_gen = gen_laugh.empty() ? 0.0 : lc_score(lc, gen_laugh);

    // audio-visual synchrony on laughter items; collapsed (zero-variance)
    // generations count as zero correlation
    auto sync_of = [&](const Tensor<float>& video, size_t row) {
        const ClipRecord& clip =
            corpus.clips[static_cast<size_t>(out.test_items[row])];
        int64_t s = out.window_starts[row];
        Waveform slice;
        slice.sample_rate = clip.waveform.sample_rate;
        int64_t spf = slice.sample_rate / 25;
        slice.samples.assign(
            clip.waveform.samples.begin() + s * spf,
            clip.waveform.samples.begin() + (s + window) * spf);
        try {
            return av_sync(video, slice);
        } catch (const NumericError&) {
            return 0.0;
        }
    };
    if (!laugh_rows.empty()) {
        double matched = 0, shuffled = 0;
        for (size_t j = 0; j < laugh_rows.size(); j++) {
            matched += sync_of(gen_laugh[j], laugh_rows[j]);
            // rotate the audio assignment for the mismatched control
            shuffled += sync_of(gen_laugh[j], laugh_rows[(j + 1) % laugh_rows.size()]);
        }
        out.report.av_sync_r = matched / static_cast<double>(laugh_rows.size());
        out.report.av_sync_shuffled = shuffled / static_cast<double>(laugh_rows.size());
    }

    // per-speaker flow heatmap similarity
    std::map<uint64_t, std::vector<Tensor<float>>> gt_by_spk, gen_by_spk;
    for (size_t k = 0; k < out.test_items.size(); k++) {
        uint64_t spk =
            corpus.manifest.clip_speakers[static_cast<size_t>(out.test_items[k])];
        gt_by_spk[spk].push_back(gt[k]);
        gen_by_spk[spk].push_back(out.generated[k]);
    }
    double cos_sum = 0;
    for (const auto& [spk, vids] : gt_by_spk) {
        std::vector<float> hr = flow_magnitude_mean(vids);
        std::vector<float> hg = flow_magnitude_mean(gen_by_spk[spk]);
        double cs = cosine_similarity(hr, hg);
        out.flow_cosine_per_speaker.emplace_back(spk, cs);
        cos_sum += cs;
    }
    out.report.flow_cosine = cos_sum / static_cast<double>(gt_by_spk.size());
    return out;
}

}  // namespace lvd
