#include "lvd/trainer.hpp"

#include <algorithm>
#include <cmath>

namespace lvd {

namespace {

uint64_t mix(uint64_t seed, uint64_t a, uint64_t b) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 2);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct Batch {
    Tensor<float> x;    // [B,C,F,H,W]
    ConditioningBundle<float> cond;
};

// assembles one training batch; augmentation applied to the window and its
// reference frame with identical parameters, prior to adding noise
Batch build_batch(const Corpus& corpus, const std::vector<int64_t>& items,
                  const std::vector<std::vector<float>>& mel,
                  const TrainConfig& cfg, int64_t feat_dim, Rng& rng,
                  bool training) {
    const ClipSpec& spec = corpus.manifest.spec;
    int64_t b = static_cast<int64_t>(items.size());
    int64_t c = spec.channels, h = spec.height, w = spec.width, f = cfg.window;
    Batch out;
    out.x = Tensor<float>::zeros({b, c, f, h, w});
    out.cond.ref = Tensor<float>::zeros({b, c, h, w});
    out.cond.audio_mel = Tensor<float>::zeros({b, f, feat_dim});
    out.cond.aug = Tensor<float>::zeros({b, AugmentParams::dim()});
    out.cond.cond_mask.assign(static_cast<size_t>(b), 1);

    int64_t chw = c * h * w;
    std::vector<float> tmp(static_cast<size_t>(chw));
    for (int64_t i = 0; i < b; i++) {
        const ClipRecord& clip = corpus.clips[static_cast<size_t>(items[static_cast<size_t>(i)])];
        WindowSample ws;
        if (training) {
            ws = sample_window(clip, static_cast<int>(f), rng);
        } else {
            // deterministic centered window for validation
            Rng fixed(mix(cfg.seed, static_cast<uint64_t>(items[static_cast<size_t>(i)]),
                          0x7a11dull));
            int64_t total = clip.frames.dim(0);
            ws = sample_window(clip, static_cast<int>(f), fixed);
            (void)total;
        }
        AugmentParams aug;
        if (training && cfg.use_augment) aug = sample_augment(rng, cfg.augment_prob);

        for (int64_t fr = 0; fr < f; fr++) {
            const float* src = ws.frames.data() + fr * chw;
            augment_image(src, tmp.data(), c, h, w, aug);
            for (int64_t ch = 0; ch < c; ch++)
                std::copy(tmp.begin() + ch * h * w, tmp.begin() + (ch + 1) * h * w,
                          out.x.data() + (((i * c + ch) * f + fr) * h * w));
        }
        augment_image(ws.ref.data(), tmp.data(), c, h, w, aug);
        std::copy(tmp.begin(), tmp.end(), out.cond.ref.data() + i * chw);

        const std::vector<float>& m = mel[static_cast<size_t>(items[static_cast<size_t>(i)])];
        std::copy(m.begin() + ws.start * feat_dim,
                  m.begin() + (ws.start + f) * feat_dim,
                  out.cond.audio_mel.data() + i * f * feat_dim);

        std::vector<float> av = aug.vec();
        std::copy(av.begin(), av.end(),
                  out.cond.aug.data() + i * AugmentParams::dim());
    }
    if (training && cfg.use_cfg_mask) mask_condition(out.cond.cond_mask, rng, cfg.cfg_mask_prob);
    return out;
}

DenoiseFn<float> model_denoiser(Denoiser<float>& model,
                                const ConditioningBundle<float>& cond,
                                double sigma_data) {
    return [&model, &cond, sigma_data](Tape<float>& tp, Tensor<float> x_t,
                                       const std::vector<double>& sg) {
        auto raw = [&model, &cond](Tape<float>& t, Tensor<float> xin,
                                   const std::vector<double>& s) {
            return model.forward(t, xin, cond, s);
        };
        return precondition<float>(tp, raw, x_t, sg, sigma_data);
    };
}

}  // namespace

double validation_loss(const Corpus& corpus, const std::vector<int64_t>& items,
                       const std::vector<std::vector<float>>& mel,
                       Denoiser<float>& model, const NoiseSchedule& sched,
                       const TrainConfig& cfg) {
    if (items.empty()) return 0.0;
    int64_t feat_dim = MelSpec{}.feat_dim();
    double total = 0.0;
    int64_t count = 0;
    for (size_t off = 0; off < items.size(); off += static_cast<size_t>(cfg.batch_size)) {
        std::vector<int64_t> chunk(items.begin() + static_cast<int64_t>(off),
                                   items.begin() +
                                       std::min(items.size(),
                                                off + static_cast<size_t>(cfg.batch_size)));
        Rng rng(mix(cfg.seed, off, 0xa11ull));
        Batch batch = build_batch(corpus, chunk, mel, cfg, feat_dim, rng, false);
        // fixed per-item noise levels keep epochs comparable
        std::vector<double> sigmas;
        for (int64_t it : chunk) {
            Rng sr(mix(cfg.seed, static_cast<uint64_t>(it), 0x51eull));
            sigmas.push_back(sample_train_sigma(sched, sr));
        }
        EdmLossOptions opt;
        opt.fixed_sigmas = &sigmas;
        Tape<float> tp;
        tp.set_recording(false);
        Rng noise_rng(mix(cfg.seed, off, 0x401eull));
        DenoiseFn<float> fn = model_denoiser(model, batch.cond, sched.sigma_data);
        Tensor<float> loss = edm_loss(tp, fn, batch.x, sched, noise_rng, nullptr, opt);
        total += static_cast<double>(loss.item()) * static_cast<double>(chunk.size());
        count += static_cast<int64_t>(chunk.size());
    }
    return total / static_cast<double>(count);
}

FitResult fit(const Corpus& corpus, Denoiser<float>& model, Ema<float>& ema,
              LionState<float>& opt, const NoiseSchedule& sched,
              const TrainConfig& cfg, const std::string& out_dir,
              std::ostream* log, int start_epoch) {
    cfg.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory: " + out_dir);

    std::vector<int64_t> train_items = corpus.split_indices("train");
    std::vector<int64_t> val_items = corpus.split_indices("val");
    if (train_items.empty()) throw DataError("fit: empty training split");
    std::vector<std::vector<float>> mel = mel_cache(corpus);
    int64_t feat_dim = MelSpec{}.feat_dim();

    FitResult res;
    int64_t global_step = 0;
    for (int epoch = start_epoch; epoch < cfg.epochs; epoch++) {
        Rng erng(mix(cfg.seed, static_cast<uint64_t>(epoch), 0xe90c4ull));
        std::vector<int64_t> order;
        for (int r = 0; r < cfg.windows_per_clip; r++)
            order.insert(order.end(), train_items.begin(), train_items.end());
        for (size_t i = order.size(); i > 1; i--)
            std::swap(order[i - 1], order[static_cast<size_t>(erng.uniform_int(static_cast<int64_t>(i)))]);

        double lr = lr_at(epoch, cfg.epochs, cfg.warmup_epochs, cfg.base_lr);
        double epoch_loss = 0.0;
        int64_t steps = 0;
        for (size_t off = 0; off < order.size(); off += static_cast<size_t>(cfg.batch_size)) {
            std::vector<int64_t> chunk(order.begin() + static_cast<int64_t>(off),
                                       order.begin() +
                                           std::min(order.size(),
                                                    off + static_cast<size_t>(cfg.batch_size)));
            Batch batch = build_batch(corpus, chunk, mel, cfg, feat_dim, erng, true);
            Tape<float> tp;
            DenoiseFn<float> fn = model_denoiser(model, batch.cond, sched.sigma_data);
            Tensor<float> loss = edm_loss(tp, fn, batch.x, sched, erng);
            double lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError(strcat_("non-finite training loss at epoch ", epoch,
                                           " step ", global_step));
            model.params.zero_grads();
            tp.backward(loss);
            lion_step(model.params, opt, lr);
            ema.update(model.params);
            epoch_loss += lv;
            steps++;
            global_step++;
            if (log)
                (*log) << "epoch=" << epoch << " step=" << global_step
                       << " loss=" << lv << " lr=" << lr << "\n";
        }
        epoch_loss /= static_cast<double>(std::max<int64_t>(1, steps));

        double vloss = 0.0;
        if (!val_items.empty()) {
            // validate with EMA weights, then restore the live ones
            std::vector<Tensor<float>> live;
            for (auto& [n, t] : model.params.entries()) live.push_back(t.clone());
            ema.copy_to(model.params);
            vloss = validation_loss(corpus, val_items, mel, model, sched, cfg);
            for (size_t i = 0; i < live.size(); i++)
                std::copy(live[i].data(), live[i].data() + live[i].numel(),
                          model.params.entries()[i].second.data());
        }
        res.train_loss.push_back(epoch_loss);
        res.val_loss.push_back(vloss);
        if (log) {
            (*log) << "epoch=" << epoch << " train_loss=" << epoch_loss
                   << " val_loss=" << vloss << " lr=" << lr << "\n";
            log->flush();
        }

        CheckpointMeta meta;
        meta.arch = model.cfg;
        meta.sched = sched;
        meta.epoch = epoch;
        meta.seed = cfg.seed;
        nlohmann::json m;
        m["train_loss"] = res.train_loss;
        m["val_loss"] = res.val_loss;
        meta.metrics = m;
        bool snapshot = (epoch % cfg.checkpoint_every == 0) || epoch == cfg.epochs - 1;
        if (snapshot) {
            std::string path =
                (fs::path(out_dir) / strcat_("ckpt_epoch", epoch, ".lvck")).string();
            save_checkpoint(path, model, ema, nullptr, meta);
        }
        std::string last = (fs::path(out_dir) / "ckpt_last.lvck").string();
        save_checkpoint(last, model, ema, &opt, meta);
        res.last_checkpoint = last;
    }
    int best = -1;
    double bestv = 0.0;
    for (size_t i = 0; i < res.val_loss.size(); i++)
        if (best < 0 || res.val_loss[i] < bestv) {
            best = static_cast<int>(i) + start_epoch;
            bestv = res.val_loss[i];
        }
    res.best_epoch = best;
    return res;
}

}  // namespace lvd
