#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>

#include <json.hpp>

#include "lvd/diffusion.hpp"
#include "lvd/synthdata.hpp"

namespace lvd {

// ---------------------------------------------------------------------------
// Lion optimizer: sign of the interpolated momentum, decoupled weight decay.

template <typename S>
struct LionState {
    std::vector<Tensor<S>> momentum;  // parallel to the parameter store
    double beta1 = 0.95;
    double beta2 = 0.98;
    double weight_decay = 0.0;

    static LionState create(const ParamStore<S>& ps, double beta1 = 0.95,
                            double beta2 = 0.98, double weight_decay = 0.0) {
        LionState st;
        st.beta1 = beta1;
        st.beta2 = beta2;
        st.weight_decay = weight_decay;
        for (const auto& [name, t] : ps.entries())
            st.momentum.push_back(Tensor<S>::zeros(t.shape()));
        return st;
    }
};

// theta <- theta - lr*(sign(beta1*m + (1-beta1)*g) + wd*theta);
// m <- beta2*m + (1-beta2)*g. sign(0) is 0.
template <typename S>
void lion_step(ParamStore<S>& params, LionState<S>& st, double lr) {
    if (st.momentum.size() != params.entries().size())
        throw ShapeError("lion_step: optimizer state does not match parameters");
    for (size_t i = 0; i < params.entries().size(); i++) {
        Tensor<S>& t = params.entries()[i].second;
        Tensor<S>& m = st.momentum[i];
        if (m.numel() != t.numel())
            throw ShapeError("lion_step: momentum shape mismatch for " +
                             params.entries()[i].first);
        S* tp = t.data();
        S* mp = m.data();
        const S* gp = t.grad();
        S b1 = static_cast<S>(st.beta1), b2 = static_cast<S>(st.beta2);
        S wd = static_cast<S>(st.weight_decay);
        S lrs = static_cast<S>(lr);
        for (int64_t k = 0; k < t.numel(); k++) {
            S u = b1 * mp[k] + (S(1) - b1) * gp[k];
            S sgn = (u > S(0)) ? S(1) : (u < S(0)) ? S(-1) : S(0);
            tp[k] -= lrs * (sgn + wd * tp[k]);
            mp[k] = b2 * mp[k] + (S(1) - b2) * gp[k];
        }
    }
}

// linear warmup to base_lr over `warmup` epochs, then cosine decay to 0
inline double lr_at(int epoch, int epochs, int warmup, double base_lr) {
    if (epoch < 0 || epoch >= epochs)
        throw ConfigError(strcat_("lr_at: epoch ", epoch, " outside [0,", epochs, ")"));
    if (epoch < warmup) return base_lr * (epoch + 1) / static_cast<double>(warmup);
    double t = static_cast<double>(epoch - warmup) / static_cast<double>(epochs - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

// ---------------------------------------------------------------------------
// Exponential moving average of the weights, used for sampling and eval.

template <typename S>
struct Ema {
    std::vector<Tensor<S>> shadow;
    double decay = 0.999;

    static Ema create(const ParamStore<S>& ps, double decay) {
        Ema e;
        e.decay = decay;
        for (const auto& [name, t] : ps.entries()) e.shadow.push_back(t.clone());
        return e;
    }

    void update(const ParamStore<S>& ps) {
        S d = static_cast<S>(decay);
        for (size_t i = 0; i < ps.entries().size(); i++) {
            const Tensor<S>& t = ps.entries()[i].second;
            S* sp = shadow[i].data();
            const S* tp = t.data();
            for (int64_t k = 0; k < t.numel(); k++)
                sp[k] = d * sp[k] + (S(1) - d) * tp[k];
        }
    }

    void copy_to(ParamStore<S>& ps) const {
        for (size_t i = 0; i < ps.entries().size(); i++) {
            Tensor<S>& t = ps.entries()[i].second;
            std::copy(shadow[i].data(), shadow[i].data() + t.numel(), t.data());
        }
    }
};

// ---------------------------------------------------------------------------
// Geometric augmentation with the parameters fed back as conditioning.

struct AugmentParams {
    float flip = 0.0f;       // {0,1}
    float rotation = 0.0f;   // radians
    float log_scale = 0.0f;  // log of the scale factor
    float dx = 0.0f, dy = 0.0f;  // pixels

    bool is_identity() const {
        return flip == 0.0f && rotation == 0.0f && log_scale == 0.0f && dx == 0.0f &&
               dy == 0.0f;
    }
    std::vector<float> vec() const { return {flip, rotation, log_scale, dx, dy}; }
    static constexpr int dim() { return 5; }
};

// with probability 1-p the identity; otherwise every transform drawn from
// bounded ranges (|rot| <= 15 deg, scale in [0.9,1.1], |translate| <= 2 px)
inline AugmentParams sample_augment(Rng& rng, double p) {
    AugmentParams a;
    if (!rng.bernoulli(p)) return a;
    a.flip = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    a.rotation = static_cast<float>(rng.uniform(-15.0, 15.0) * 3.14159265358979323846 / 180.0);
    a.log_scale = static_cast<float>(rng.uniform(std::log(0.9), std::log(1.1)));
    a.dx = static_cast<float>(rng.uniform(-2.0, 2.0));
    a.dy = static_cast<float>(rng.uniform(-2.0, 2.0));
    return a;
}

// one image CHW, bilinear resampling with edge clamping; exact copy for the
// identity parameters
inline void augment_image(const float* src, float* dst, int64_t c, int64_t h,
                          int64_t w, const AugmentParams& a) {
    if (a.is_identity()) {
        std::copy(src, src + c * h * w, dst);
        return;
    }
    double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    double cosr = std::cos(a.rotation), sinr = std::sin(a.rotation);
    double inv_s = std::exp(-static_cast<double>(a.log_scale));
    for (int64_t y = 0; y < h; y++)
        for (int64_t x = 0; x < w; x++) {
            // invert: untranslate, unrotate/unscale, then unflip
            double px = (x - a.dx) - cx;
            double py = (y - a.dy) - cy;
            double sx = (cosr * px + sinr * py) * inv_s + cx;
            double sy = (-sinr * px + cosr * py) * inv_s + cy;
            if (a.flip != 0.0f) sx = (w - 1) - sx;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            int64_t x0 = static_cast<int64_t>(sx), y0 = static_cast<int64_t>(sy);
            int64_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
            double fx = sx - x0, fy = sy - y0;
            for (int64_t ch = 0; ch < c; ch++) {
                const float* p = src + ch * h * w;
                double v = (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
                           fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
                dst[ch * h * w + y * w + x] = static_cast<float>(v);
            }
        }
}

// per-sample Bernoulli(p); masked samples switch to the unconditional branch
inline void mask_condition(std::vector<uint8_t>& cond_mask, Rng& rng, double p) {
    if (p < 0.0 || p > 1.0) throw ConfigError("mask probability outside [0,1]");
    for (auto& m : cond_mask)
        if (rng.bernoulli(p)) m = 0;
}

// ---------------------------------------------------------------------------
// Window sampling: 16 consecutive frames, reference = preceding frame
// (frame s when the window starts at the clip head).

struct WindowSample {
    int64_t start = 0;
    Tensor<float> frames;  // [F,C,H,W]
    Tensor<float> ref;     // [C,H,W]
};

inline WindowSample sample_window(const ClipRecord& clip, int window, Rng& rng) {
    int64_t total = clip.frames.dim(0);
    if (total < window)
        throw DataError(strcat_("clip ", clip.id, " has ", total,
                                " frames, shorter than the ", window, "-frame window"));
    WindowSample ws;
    ws.start = rng.uniform_int(total - window + 1);
    int64_t chw = clip.frames.numel() / total;
    ws.frames = Tensor<float>::zeros({window, clip.frames.dim(1), clip.frames.dim(2),
                                      clip.frames.dim(3)});
    std::copy(clip.frames.data() + ws.start * chw,
              clip.frames.data() + (ws.start + window) * chw, ws.frames.data());
    int64_t ref_idx = ws.start > 0 ? ws.start - 1 : 0;
    ws.ref = Tensor<float>::zeros({clip.frames.dim(1), clip.frames.dim(2),
                                   clip.frames.dim(3)});
    std::copy(clip.frames.data() + ref_idx * chw,
              clip.frames.data() + (ref_idx + 1) * chw, ws.ref.data());
    return ws;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest + named tensor blobs.

inline nlohmann::json denoiser_config_json(const DenoiserConfig& c) {
    nlohmann::json j;
    j["channels"] = c.channels;
    j["frames"] = c.frames;
    j["height"] = c.height;
    j["width"] = c.width;
    j["base_width"] = c.base_width;
    j["channel_mult"] = c.channel_mult;
    j["attn_levels"] = c.attn_levels;
    j["blocks_per_level"] = c.blocks_per_level;
    j["embed_dim"] = c.embed_dim;
    j["heads"] = c.heads;
    j["gn_groups"] = c.gn_groups;
    j["temporal_kernel"] = c.temporal_kernel;
    j["aug_dim"] = c.aug_dim;
    j["zero_init_final"] = c.zero_init_final;
    return j;
}

inline DenoiserConfig denoiser_config_from_json(const nlohmann::json& j) {
    DenoiserConfig c;
    c.channels = j.at("channels").get<int64_t>();
    c.frames = j.at("frames").get<int64_t>();
    c.height = j.at("height").get<int64_t>();
    c.width = j.at("width").get<int64_t>();
    c.base_width = j.at("base_width").get<int64_t>();
    c.channel_mult = j.at("channel_mult").get<std::vector<int64_t>>();
    c.attn_levels = j.at("attn_levels").get<std::vector<int64_t>>();
    c.blocks_per_level = j.at("blocks_per_level").get<int64_t>();
    c.embed_dim = j.at("embed_dim").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.gn_groups = j.at("gn_groups").get<int64_t>();
    c.temporal_kernel = j.at("temporal_kernel").get<int64_t>();
    c.aug_dim = j.at("aug_dim").get<int64_t>();
    c.zero_init_final = j.at("zero_init_final").get<bool>();
    return c;
}

inline nlohmann::json schedule_json(const NoiseSchedule& s) {
    nlohmann::json j;
    j["sigma_min"] = s.sigma_min;
    j["sigma_max"] = s.sigma_max;
    j["rho"] = s.rho;
    j["sigma_data"] = s.sigma_data;
    j["p_mean"] = s.p_mean;
    j["p_std"] = s.p_std;
    j["steps"] = s.steps;
    j["law"] = s.law == NoiseSchedule::TrainSigmaLaw::log_normal ? "log_normal"
                                                                 : "uniform_ladder";
    return j;
}

inline NoiseSchedule schedule_from_json(const nlohmann::json& j) {
    NoiseSchedule s;
    s.sigma_min = j.at("sigma_min").get<double>();
    s.sigma_max = j.at("sigma_max").get<double>();
    s.rho = j.at("rho").get<double>();
    s.sigma_data = j.at("sigma_data").get<double>();
    s.p_mean = j.at("p_mean").get<double>();
    s.p_std = j.at("p_std").get<double>();
    s.steps = j.at("steps").get<int>();
    s.law = j.at("law").get<std::string>() == "uniform_ladder"
                ? NoiseSchedule::TrainSigmaLaw::uniform_ladder
                : NoiseSchedule::TrainSigmaLaw::log_normal;
    return s;
}

constexpr char kCkptMagic[8] = {'L', 'V', 'C', 'K', 'P', 'T', '0', '1'};

struct CheckpointMeta {
    DenoiserConfig arch;
    NoiseSchedule sched;
    int epoch = 0;
    uint64_t seed = 0;
    bool has_optimizer = false;
    nlohmann::json metrics;  // free-form log (losses per epoch, etc.)
};

inline void save_checkpoint(const std::string& path, const Denoiser<float>& model,
                            const Ema<float>& ema, const LionState<float>* opt,
                            const CheckpointMeta& meta) {
    nlohmann::json j;
    j["arch"] = denoiser_config_json(meta.arch);
    j["schedule"] = schedule_json(meta.sched);
    j["epoch"] = meta.epoch;
    j["seed"] = meta.seed;
    j["has_optimizer"] = opt != nullptr;
    j["ema_decay"] = ema.decay;
    j["metrics"] = meta.metrics;
    std::vector<std::string> names;
    for (const auto& [n, t] : model.params.entries()) names.push_back(n);
    j["tensors"] = names;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint: " + path);
    os.write(kCkptMagic, 8);
    std::string js = j.dump();
    uint64_t len = js.size();
    os.write(reinterpret_cast<const char*>(&len), 8);
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    for (const auto& [n, t] : model.params.entries()) write_tensor(os, t);
    for (const auto& t : ema.shadow) write_tensor(os, t);
    if (opt)
        for (const auto& t : opt->momentum) write_tensor(os, t);
    if (!os) throw DataError("short checkpoint write: " + path);
}

struct LoadedCheckpoint {
    CheckpointMeta meta;
    std::unique_ptr<Denoiser<float>> model;
    Ema<float> ema;
    std::optional<LionState<float>> optimizer;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw DataError("bad checkpoint magic: " + path);
    uint64_t len = 0;
    is.read(reinterpret_cast<char*>(&len), 8);
    std::string js(len, '\0');
    is.read(js.data(), static_cast<std::streamsize>(len));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(strcat_("corrupt checkpoint manifest: ", e.what()));
    }
    LoadedCheckpoint out;
    out.meta.arch = denoiser_config_from_json(j.at("arch"));
    out.meta.sched = schedule_from_json(j.at("schedule"));
    out.meta.epoch = j.at("epoch").get<int>();
    out.meta.seed = j.at("seed").get<uint64_t>();
    out.meta.has_optimizer = j.at("has_optimizer").get<bool>();
    out.meta.metrics = j.value("metrics", nlohmann::json::object());
    out.model = std::make_unique<Denoiser<float>>(out.meta.arch, 0);

    std::vector<std::string> names = j.at("tensors").get<std::vector<std::string>>();
    for (const std::string& n : names) {
        Tensor<float> t = read_tensor<float>(is);
        Tensor<float>* dst = out.model->params.find(n);
        if (!dst) continue;  // name lookup keeps older/newer files loadable
        if (dst->shape() != t.shape())
            throw DataError("checkpoint tensor shape mismatch for " + n);
        std::copy(t.data(), t.data() + t.numel(), dst->data());
    }
    out.ema = Ema<float>::create(out.model->params, j.value("ema_decay", 0.999));
    for (size_t i = 0; i < names.size(); i++) {
        Tensor<float> t = read_tensor<float>(is);
        if (i < out.ema.shadow.size() && out.ema.shadow[i].shape() == t.shape())
            std::copy(t.data(), t.data() + t.numel(), out.ema.shadow[i].data());
    }
    if (out.meta.has_optimizer) {
        LionState<float> st = LionState<float>::create(out.model->params);
        for (size_t i = 0; i < names.size(); i++) {
            Tensor<float> t = read_tensor<float>(is);
            if (i < st.momentum.size() && st.momentum[i].shape() == t.shape())
                std::copy(t.data(), t.data() + t.numel(), st.momentum[i].data());
        }
        out.optimizer = std::move(st);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainConfig {
    int epochs = 60;
    int warmup_epochs = 20;
    int batch_size = 8;
    double base_lr = 1e-4;
    double cfg_mask_prob = 0.1;
    double augment_prob = 0.25;
    double ema_decay = 0.999;
    double weight_decay = 0.0;
    double lion_beta1 = 0.95;
    double lion_beta2 = 0.98;
    uint64_t seed = 0;
    int window = 16;
    int windows_per_clip = 1;
    int checkpoint_every = 1;
    bool use_cfg_mask = true;
    bool use_augment = true;

    void validate() const {
        if (epochs < 1 || warmup_epochs < 1 || warmup_epochs >= epochs)
            throw ConfigError("train: need 1 <= warmup < epochs");
        if (cfg_mask_prob < 0 || cfg_mask_prob > 1 || augment_prob < 0 || augment_prob > 1)
            throw ConfigError("train: probabilities must lie in [0,1]");
        if (batch_size < 1) throw ConfigError("train: batch size must be positive");
    }
};

struct FitResult {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;
    int best_epoch = -1;
    std::string last_checkpoint;
};

// mel feature cache for every clip of a corpus
inline std::vector<std::vector<float>> mel_cache(const Corpus& corpus,
                                                 const MelSpec& spec = {}) {
    std::vector<std::vector<float>> cache;
    cache.reserve(corpus.clips.size());
    for (const auto& clip : corpus.clips)
        cache.push_back(mel_sequence(clip.waveform, clip.frames.dim(0), spec));
    return cache;
}

FitResult fit(const Corpus& corpus, Denoiser<float>& model, Ema<float>& ema,
              LionState<float>& opt, const NoiseSchedule& sched,
              const TrainConfig& cfg, const std::string& out_dir,
              std::ostream* log = nullptr, int start_epoch = 0);

// validation loss: zero augmentation parameters, no conditioning mask,
// noise levels fixed per item so epochs are comparable
double validation_loss(const Corpus& corpus, const std::vector<int64_t>& items,
                       const std::vector<std::vector<float>>& mel,
                       Denoiser<float>& model, const NoiseSchedule& sched,
                       const TrainConfig& cfg);

}  // namespace lvd
