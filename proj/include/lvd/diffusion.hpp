#pragma once

#include <functional>

#include "lvd/unet.hpp"

// Denoising-diffusion machinery: the sigma ladder and training sigma law,
// data perturbation, the preconditioned denoiser wrapper, the weighted
// denoising loss, guidance, and the Heun probability-flow sampler.

namespace lvd {

struct NoiseSchedule {
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double rho = 7.0;
    double sigma_data = 0.5;
    double p_mean = -1.2;  // log-normal training sigma law
    double p_std = 1.2;
    int steps = 32;

    enum class TrainSigmaLaw { log_normal, uniform_ladder };
    TrainSigmaLaw law = TrainSigmaLaw::log_normal;
};

// Descending ladder sigma_0 = sigma_max > ... > sigma_{N-1} = sigma_min,
// warped by rho, with a final 0 appended.
inline std::vector<double> sigma_ladder(const NoiseSchedule& s) {
    if (s.steps < 2) throw ConfigError("sigma_ladder: needs at least 2 steps");
    if (!(s.sigma_max > s.sigma_min) || !(s.sigma_min > 0.0))
        throw ConfigError("sigma_ladder: requires sigma_max > sigma_min > 0");
    std::vector<double> out(static_cast<size_t>(s.steps) + 1, 0.0);
    double a = std::pow(s.sigma_max, 1.0 / s.rho);
    double b = std::pow(s.sigma_min, 1.0 / s.rho);
    for (int i = 0; i < s.steps; i++) {
        double t = static_cast<double>(i) / static_cast<double>(s.steps - 1);
        out[static_cast<size_t>(i)] = std::pow(a + t * (b - a), s.rho);
    }
    return out;
}

inline double sample_train_sigma(const NoiseSchedule& s, Rng& rng) {
    if (s.law == NoiseSchedule::TrainSigmaLaw::log_normal)
        return std::exp(s.p_mean + s.p_std * rng.normal());
    std::vector<double> ladder = sigma_ladder(s);
    return ladder[static_cast<size_t>(rng.uniform_int(s.steps))];
}

// w_t = (sigma^2 + sigma_data^2) / (sigma * sigma_data)^2
inline double loss_weight(const NoiseSchedule& s, double sigma) {
    double s2 = sigma * sigma, d2 = s.sigma_data * s.sigma_data;
    return (s2 + d2) / (s2 * d2);
}

struct PrecondCoeffs {
    double c_skip, c_out, c_in;
};

inline PrecondCoeffs precond_coeffs(double sigma, double sigma_data) {
    if (!(sigma > 0.0))
        throw NumericError(strcat_("precondition: sigma must be positive, got ", sigma));
    double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
    double r = std::sqrt(s2 + d2);
    return {d2 / (s2 + d2), sigma * sigma_data / r, 1.0 / r};
}

// A denoiser over a batch at per-sample noise levels.
template <typename S>
using DenoiseFn =
    std::function<Tensor<S>(Tape<S>&, Tensor<S>, const std::vector<double>&)>;

// D = c_skip(sigma)*x_t + c_out(sigma)*raw(c_in(sigma)*x_t, sigma)
template <typename S, typename RawFn>
Tensor<S> precondition(Tape<S>& tp, RawFn&& raw, Tensor<S> x_t,
                       const std::vector<double>& sigmas, double sigma_data) {
    int64_t b = x_t.dim(0);
    if (static_cast<int64_t>(sigmas.size()) != b)
        throw ShapeError("precondition: sigma count must match batch");
    std::vector<S> cin(sigmas.size()), cskip(sigmas.size()), cout(sigmas.size());
    for (size_t i = 0; i < sigmas.size(); i++) {
        PrecondCoeffs c = precond_coeffs(sigmas[i], sigma_data);
        cin[i] = static_cast<S>(c.c_in);
        cskip[i] = static_cast<S>(c.c_skip);
        cout[i] = static_cast<S>(c.c_out);
    }
    Tensor<S> f = raw(tp, scale_per_sample(tp, x_t, cin), sigmas);
    return add(tp, scale_per_sample(tp, x_t, cskip), scale_per_sample(tp, f, cout));
}

// x_t = x + n with n ~ N(0, sigma^2 I). Returns (x_t, n).
template <typename S>
std::pair<Tensor<S>, Tensor<S>> perturb(const Tensor<S>& x, double sigma, Rng& rng) {
    if (sigma < 0.0) throw NumericError("perturb: sigma must be non-negative");
    Tensor<S> n = Tensor<S>::zeros(x.shape());
    Tensor<S> x_t = Tensor<S>::zeros(x.shape());
    for (int64_t i = 0; i < x.numel(); i++) {
        S nv = static_cast<S>(rng.normal() * sigma);
        n.data()[i] = nv;
        x_t.data()[i] = x.data()[i] + nv;
    }
    return {x_t, n};
}

struct EdmLossOptions {
    const std::vector<double>* fixed_sigmas = nullptr;  // overrides the law
    bool unit_weight = false;                           // force w_t = 1
    double weight_scale = 1.0;
};

// mean over the batch of w_t * per-element-mean squared denoising error.
// `denoise` is the full preconditioned denoiser.
template <typename S>
Tensor<S> edm_loss(Tape<S>& tp, const DenoiseFn<S>& denoise, const Tensor<S>& batch,
                   const NoiseSchedule& sched, Rng& rng,
                   std::vector<double>* sigmas_out = nullptr,
                   const EdmLossOptions& opt = {}) {
    int64_t b = batch.dim(0);
    std::vector<double> sigmas(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; i++)
        sigmas[static_cast<size_t>(i)] = opt.fixed_sigmas
                                             ? (*opt.fixed_sigmas)[static_cast<size_t>(i)]
                                             : sample_train_sigma(sched, rng);
    if (sigmas_out) *sigmas_out = sigmas;

    int64_t rest = batch.numel() / b;
    Tensor<S> x_t = Tensor<S>::zeros(batch.shape());
    for (int64_t i = 0; i < b; i++) {
        double sg = sigmas[static_cast<size_t>(i)];
        for (int64_t k = 0; k < rest; k++)
            x_t.data()[i * rest + k] =
                batch.data()[i * rest + k] + static_cast<S>(rng.normal() * sg);
    }

    Tensor<S> d = denoise(tp, x_t, sigmas);
    Tensor<S> err = sub(tp, d, batch);
    Tensor<S> per_sample = mean_per_sample(tp, mul(tp, err, err));
    std::vector<S> w(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; i++)
        w[static_cast<size_t>(i)] = static_cast<S>(
            opt.weight_scale *
            (opt.unit_weight ? 1.0 : loss_weight(sched, sigmas[static_cast<size_t>(i)])));
    return weighted_sum(tp, per_sample, w, S(1) / static_cast<S>(b));
}

// w*D(x;cond) + (1-w)*D(x;null). At w == 1 the unconditional branch is
// never evaluated.
template <typename S>
Tensor<S> cfg_denoise(Tape<S>& tp, const DenoiseFn<S>& cond,
                      const DenoiseFn<S>& uncond, Tensor<S> x_t,
                      const std::vector<double>& sigmas, double w) {
    if (w < 1.0) throw ConfigError("guidance weight must be >= 1");
    Tensor<S> dc = cond(tp, x_t, sigmas);
    if (w == 1.0) return dc;
    Tensor<S> du = uncond(tp, x_t, sigmas);
    return add(tp, scale(tp, dc, static_cast<S>(w)), scale(tp, du, static_cast<S>(1.0 - w)));
}

enum class SolverKind { heun, euler };

// Integrates the probability-flow ODE over a descending ladder. When the
// next sigma is 0 the Euler step collapses onto the model prediction, which
// is taken exactly.
template <typename S>
Tensor<S> ode_integrate(Tape<S>& tp, const DenoiseFn<S>& denoise, Tensor<S> x0,
                        const std::vector<double>& ladder,
                        SolverKind kind = SolverKind::heun) {
    Tensor<S> x = x0;
    int64_t b = x.dim(0);
    for (size_t i = 0; i + 1 < ladder.size(); i++) {
        double sg = ladder[i], sn = ladder[i + 1];
        std::vector<double> sgv(static_cast<size_t>(b), sg);
        Tensor<S> d0 = denoise(tp, x, sgv);
        if (sn == 0.0) {
            x = d0;
            continue;
        }
        double dt = sn - sg;
        Tensor<S> d = scale(tp, sub(tp, x, d0), static_cast<S>(1.0 / sg));
        Tensor<S> x1 = add(tp, x, scale(tp, d, static_cast<S>(dt)));
        if (kind == SolverKind::euler) {
            x = x1;
            continue;
        }
        std::vector<double> snv(static_cast<size_t>(b), sn);
        Tensor<S> d1 = denoise(tp, x1, snv);
        Tensor<S> dp = scale(tp, sub(tp, x1, d1), static_cast<S>(1.0 / sn));
        x = add(tp, x, scale(tp, add(tp, d, dp), static_cast<S>(dt / 2.0)));
    }
    return x;
}

struct SamplerConfig {
    double guidance = 1.5;  // >= 1
    int steps = 32;         // >= 2
    uint64_t seed = 0;

    void validate() const {
        if (guidance < 1.0) throw ConfigError("sampler: guidance must be >= 1");
        if (steps < 2) throw ConfigError("sampler: steps must be >= 2");
    }
};

// Builds the guided, preconditioned denoiser for one clip's conditioning.
template <typename S>
using ClipDenoiserFactory =
    std::function<DenoiseFn<S>(Tensor<S> ref, Tensor<S> audio_mel)>;

// Model-backed factory: classifier-free guidance over the preconditioned
// network, with augmentation conditioning zeroed (inference setting).
template <typename S>
ClipDenoiserFactory<S> model_clip_factory(const Denoiser<S>& model,
                                          const NoiseSchedule& sched,
                                          double guidance) {
    const Denoiser<S>* m = &model;
    double sigma_data = sched.sigma_data;
    return [m, sigma_data, guidance](Tensor<S> ref, Tensor<S> audio_mel) -> DenoiseFn<S> {
        int64_t b = ref.dim(0);
        ConditioningBundle<S> cond;
        cond.ref = ref;
        cond.audio_mel = audio_mel;
        cond.aug = Tensor<S>::zeros({b, m->cfg.aug_dim});
        cond.cond_mask.assign(static_cast<size_t>(b), 1);
        ConditioningBundle<S> null_cond = cond;
        null_cond.cond_mask.assign(static_cast<size_t>(b), 0);

        DenoiseFn<S> c = [m, cond, sigma_data](Tape<S>& tp, Tensor<S> x_t,
                                               const std::vector<double>& sg) {
            auto raw = [m, &cond](Tape<S>& t, Tensor<S> xin,
                                  const std::vector<double>& s) {
                return m->forward(t, xin, cond, s);
            };
            return precondition<S>(tp, raw, x_t, sg, sigma_data);
        };
        DenoiseFn<S> u = [m, null_cond, sigma_data](Tape<S>& tp, Tensor<S> x_t,
                                                    const std::vector<double>& sg) {
            auto raw = [m, &null_cond](Tape<S>& t, Tensor<S> xin,
                                       const std::vector<double>& s) {
                return m->forward(t, xin, null_cond, s);
            };
            return precondition<S>(tp, raw, x_t, sg, sigma_data);
        };
        return [c, u, guidance](Tape<S>& tp, Tensor<S> x_t,
                                const std::vector<double>& sg) {
            return cfg_denoise(tp, c, u, x_t, sg, guidance);
        };
    };
}

template <typename S>
Tensor<S> clamp_unit(Tensor<S> x) {
    for (int64_t i = 0; i < x.numel(); i++)
        x.data()[i] = std::clamp(x.data()[i], S(-1), S(1));
    return x;
}

// One clip: start at sigma_max * N(0, I), run the Heun ladder, clamp.
template <typename S>
Tensor<S> sample_clip(const ClipDenoiserFactory<S>& factory, Tensor<S> ref,
                      Tensor<S> audio_mel, Shape video_shape,
                      const NoiseSchedule& sched, int steps, Rng& rng) {
    NoiseSchedule s = sched;
    if (steps > 0) s.steps = steps;
    std::vector<double> ladder = sigma_ladder(s);
    Tensor<S> x0 = Tensor<S>::randn(video_shape, rng, static_cast<S>(ladder[0]));
    DenoiseFn<S> denoise = factory(ref, audio_mel);
    Tape<S> tp;
    tp.set_recording(false);
    Tensor<S> out = ode_integrate(tp, denoise, x0, ladder, SolverKind::heun);
    return clamp_unit(out);
}

// Long clips: the first clip conditions on the given reference, every
// following clip on the last frame generated so far. Output is trimmed to
// the audio's frame count.
template <typename S>
Tensor<S> autoregressive_generate(const ClipDenoiserFactory<S>& factory,
                                  Tensor<S> ref, const Waveform& audio,
                                  const NoiseSchedule& sched,
                                  const SamplerConfig& scfg, int64_t c, int64_t h,
                                  int64_t w, int64_t clip_len = 16,
                                  const MelSpec& mspec = {}) {
    scfg.validate();
    if (audio.samples.empty()) throw DataError("autoregressive_generate: empty audio");
    int64_t f_audio =
        (static_cast<int64_t>(audio.samples.size()) + mspec.chunk_len() - 1) /
        mspec.chunk_len();
    int64_t n_clips = (f_audio + clip_len - 1) / clip_len;
    int64_t f_padded = n_clips * clip_len;
    std::vector<float> mel = mel_sequence(audio, f_padded, mspec);
    int64_t fd = mspec.feat_dim();

    Rng rng(scfg.seed);
    Tensor<S> out = Tensor<S>::zeros({1, c, f_padded, h, w});
    Tensor<S> cur_ref = ref;
    for (int64_t k = 0; k < n_clips; k++) {
        Tensor<S> mel_clip = Tensor<S>::zeros({1, clip_len, fd});
        for (int64_t i = 0; i < clip_len * fd; i++)
            mel_clip.data()[i] = static_cast<S>(mel[static_cast<size_t>((k * clip_len) * fd + i)]);
        Tensor<S> clip = sample_clip(factory, cur_ref, mel_clip,
                                     {1, c, clip_len, h, w}, sched, scfg.steps, rng);
        for (int64_t ch = 0; ch < c; ch++)
            for (int64_t f = 0; f < clip_len; f++)
                std::copy(clip.data() + (ch * clip_len + f) * h * w,
                          clip.data() + (ch * clip_len + f + 1) * h * w,
                          out.data() + (ch * f_padded + k * clip_len + f) * h * w);
        // last generated frame becomes the next reference
        cur_ref = Tensor<S>::zeros({1, c, h, w});
        for (int64_t ch = 0; ch < c; ch++)
            std::copy(clip.data() + (ch * clip_len + clip_len - 1) * h * w,
                      clip.data() + (ch * clip_len + clip_len) * h * w,
                      cur_ref.data() + ch * h * w);
    }
    if (f_audio == f_padded) return out;
    Tensor<S> trimmed = Tensor<S>::zeros({1, c, f_audio, h, w});
    for (int64_t ch = 0; ch < c; ch++)
        std::copy(out.data() + ch * f_padded * h * w,
                  out.data() + (ch * f_padded + f_audio) * h * w,
                  trimmed.data() + ch * f_audio * h * w);
    return trimmed;
}

}  // namespace lvd
