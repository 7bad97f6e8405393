// lvd: desk-scale audio-driven video diffusion.
//
// Verbs: synth-data, train, sample, eval, flow-map. Runs are reproducible
// from a single seed; every command writes its fully resolved config next
// to its outputs. Thread count is controlled only through the BLAS
// environment variable (OPENBLAS_NUM_THREADS).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "lvd/config.hpp"
#include "lvd/diffusion.hpp"
#include "lvd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lvd;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::string profile;
    uint64_t seed = 0;
    bool seed_set = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool need_out = true) {
    cmd->add_option("--config", args.config_path, "configuration file (key = value sections)");
    auto* out = cmd->add_option("--out", args.out_dir, "output directory");
    if (need_out) out->required();
    cmd->add_option("--profile", args.profile, "configuration profile: paper or desk");
    cmd->add_option("--seed", args.seed, "global seed")->each([&args](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--set", args.overrides, "override, section.key=value")
        ->take_all();
}

struct Resolved {
    RunConfig cfg;
    std::vector<std::pair<std::string, ValueSource>> prov;
};

Resolved resolve(const CommonArgs& args) {
    Resolved r;
    if (!args.profile.empty()) apply_profile(r.cfg, args.profile, &r.prov);
    if (!args.config_path.empty())
        r.cfg = parse_config_text(read_text_file(args.config_path), r.cfg, &r.prov);
    for (const std::string& ov : args.overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must be section.key=value, got " + ov);
        apply_override(r.cfg, ov.substr(0, eq), ov.substr(eq + 1), &r.prov);
    }
    if (args.seed_set) r.cfg.seed = args.seed;
    propagate_seed(r.cfg);
    return r;
}

void write_resolved(const Resolved& r, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory: " + dir);
    write_text_file((fs::path(dir) / "resolved_config.txt").string(),
                    resolved_config_text(r.cfg, r.prov));
}

// model geometry follows the corpus it is trained on
DenoiserConfig model_config_for(const RunConfig& cfg, const ClipSpec& spec) {
    DenoiserConfig m = cfg.model;
    m.channels = spec.channels;
    m.height = spec.height;
    m.width = spec.width;
    m.frames = cfg.train.window;
    return m;
}

int cmd_synth_data(const CommonArgs& args) {
    Resolved r = resolve(args);
    write_resolved(r, args.out_dir);
    ClipSpec spec;
    spec.height = r.cfg.height;
    spec.width = r.cfg.width;
    spec.duration = r.cfg.clip_duration;
    Corpus corpus = gen_corpus(r.cfg.n_speakers, r.cfg.clips_per_speaker, r.cfg.seed,
                               spec, r.cfg.neutral_every);
    save_corpus(corpus, args.out_dir);
    std::cout << "wrote " << corpus.clips.size() << " clips to " << args.out_dir
              << "\n";
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& corpus_dir,
              const std::string& resume_path) {
    Resolved r = resolve(args);
    write_resolved(r, args.out_dir);
    Corpus corpus = load_corpus(corpus_dir);

    std::unique_ptr<Denoiser<float>> model;
    Ema<float> ema;
    LionState<float> opt;
    int start_epoch = 0;
    if (!resume_path.empty()) {
        LoadedCheckpoint ck = load_checkpoint(resume_path);
        model = std::move(ck.model);
        ema = std::move(ck.ema);
        opt = ck.optimizer ? std::move(*ck.optimizer)
                           : LionState<float>::create(model->params, r.cfg.train.lion_beta1,
                                                      r.cfg.train.lion_beta2,
                                                      r.cfg.train.weight_decay);
        start_epoch = ck.meta.epoch + 1;
    } else {
        DenoiserConfig mc = model_config_for(r.cfg, corpus.manifest.spec);
        model = std::make_unique<Denoiser<float>>(mc, r.cfg.seed);
        ema = Ema<float>::create(model->params, r.cfg.train.ema_decay);
        opt = LionState<float>::create(model->params, r.cfg.train.lion_beta1,
                                       r.cfg.train.lion_beta2, r.cfg.train.weight_decay);
    }

    std::ofstream log((fs::path(args.out_dir) / "train_log.txt").string(),
                      std::ios::app);
    FitResult res = fit(corpus, *model, ema, opt, r.cfg.sched, r.cfg.train,
                        args.out_dir, &log, start_epoch);
    std::cout << "trained " << res.train_loss.size() << " epochs, best epoch "
              << res.best_epoch << ", last checkpoint " << res.last_checkpoint << "\n";
    return 0;
}

Tensor<float> load_ref_image(const std::string& path, const DenoiserConfig& mc) {
    Tensor<float> ref;
    if (path.size() > 4 && path.substr(path.size() - 4) == ".ppm") {
        int64_t h = 0, w = 0;
        std::vector<float> img = read_ppm(path, h, w);
        if (h != mc.height || w != mc.width)
            throw DataError(strcat_("reference image is ", w, "x", h, ", model wants ",
                                    mc.width, "x", mc.height));
        ref = Tensor<float>::zeros({1, 3, h, w});
        for (int64_t i = 0; i < 3 * h * w; i++)
            ref.data()[i] = img[static_cast<size_t>(i)] * 2.0f - 1.0f;
    } else {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw DataError("cannot open reference image: " + path);
        Tensor<float> t = read_tensor<float>(is);
        if (t.rank() != 3 || t.dim(0) != mc.channels || t.dim(1) != mc.height ||
            t.dim(2) != mc.width)
            throw DataError("reference tensor must be [C,H,W] matching the model");
        ref = t.reshaped({1, t.dim(0), t.dim(1), t.dim(2)});
    }
    return ref;
}

int cmd_sample(const CommonArgs& args, const std::string& ckpt_path,
               const std::string& ref_path, const std::string& audio_path,
               double guidance_flag, bool guidance_set) {
    Resolved r = resolve(args);
    if (guidance_set) r.cfg.sampler.guidance = guidance_flag;
    write_resolved(r, args.out_dir);

    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    ck.ema.copy_to(ck.model->params);  // sample from the averaged weights
    const DenoiserConfig& mc = ck.model->cfg;

    Waveform audio = read_wav(audio_path);
    if (audio.sample_rate != 16000)
        throw DataError(strcat_("audio must be 16 kHz, got ", audio.sample_rate,
                                " Hz (no resampling)"));
    Tensor<float> ref = load_ref_image(ref_path, mc);

    SamplerConfig scfg = r.cfg.sampler;
    scfg.validate();
    NoiseSchedule sched = ck.meta.sched;
    ClipDenoiserFactory<float> factory =
        model_clip_factory<float>(*ck.model, sched, scfg.guidance);
    Tensor<float> video = autoregressive_generate(factory, ref, audio, sched, scfg,
                                                  mc.channels, mc.height, mc.width,
                                                  mc.frames);
    int64_t frames = video.dim(2);
    std::ofstream fb((fs::path(args.out_dir) / "frames.bin").string(),
                     std::ios::binary);
    write_tensor(fb, video_to_frames(video));
    write_wav((fs::path(args.out_dir) / "audio.wav").string(), audio);
    Tensor<float> fr = video_to_frames(video);
    for (int64_t f = 0; f < frames; f++) {
        std::vector<float> img(static_cast<size_t>(3 * mc.height * mc.width));
        for (int64_t i = 0; i < static_cast<int64_t>(img.size()); i++)
            img[static_cast<size_t>(i)] =
                (fr.data()[f * 3 * mc.height * mc.width + i] + 1.0f) * 0.5f;
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", static_cast<int>(f));
        write_ppm((fs::path(args.out_dir) / name).string(), img, mc.height, mc.width);
    }
    std::cout << "wrote " << frames << " frames to " << args.out_dir << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_path,
             const std::string& corpus_dir, double guidance_flag, bool guidance_set) {
    Resolved r = resolve(args);
    if (guidance_set) r.cfg.sampler.guidance = guidance_flag;
    write_resolved(r, args.out_dir);

    Corpus corpus = load_corpus(corpus_dir);
    LoadedCheckpoint ck = load_checkpoint(ckpt_path);
    ck.ema.copy_to(ck.model->params);

    SamplerConfig scfg = r.cfg.sampler;
    LcOptions lc_opt;
    lc_opt.seed = r.cfg.eval_lc_seed;
    lc_opt.steps = r.cfg.eval_lc_steps;
    EvalOutputs ev = run_eval(corpus, *ck.model, ck.meta.sched, scfg, r.cfg.eval_batch,
                              lc_opt);

    write_report((fs::path(args.out_dir) / "report.txt").string(), ev.report);
    {
        std::ofstream os((fs::path(args.out_dir) / "report.txt").string(),
                         std::ios::app);
        for (const auto& [spk, cs] : ev.flow_cosine_per_speaker)
            os << "flow_cosine_spk" << spk << " = " << cs << "\n";
    }
    fs::create_directories(fs::path(args.out_dir) / "generated");
    for (size_t k = 0; k < ev.generated.size(); k++) {
        const std::string& id =
            corpus.manifest.clip_ids[static_cast<size_t>(ev.test_items[k])];
        std::ofstream fb((fs::path(args.out_dir) / "generated" / (id + ".bin")).string(),
                         std::ios::binary);
        write_tensor(fb, ev.generated[k]);
    }
    std::cout << read_text_file((fs::path(args.out_dir) / "report.txt").string());
    return 0;
}

int cmd_flow_map(const std::string& video_dir, const std::string& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create output directory: " + out_dir);

    auto write_normalized = [&](const std::string& name, const std::vector<float>& map,
                                int64_t h, int64_t w, float scale) {
        std::vector<float> img(map.size());
        for (size_t i = 0; i < map.size(); i++)
            img[i] = scale > 0 ? map[i] / scale : 0.0f;
        write_pgm((fs::path(out_dir) / name).string(), img, h, w);
    };

    if (fs::exists(fs::path(video_dir) / "manifest.json")) {
        // corpus mode: one averaged heatmap per speaker
        Corpus corpus = load_corpus(video_dir);
        std::map<uint64_t, std::vector<Tensor<float>>> by_spk;
        for (size_t i = 0; i < corpus.clips.size(); i++)
            by_spk[corpus.manifest.clip_speakers[i]].push_back(corpus.clips[i].frames);
        std::map<uint64_t, std::vector<float>> maps;
        float peak = 0;
        for (const auto& [spk, vids] : by_spk) {
            maps[spk] = flow_magnitude_mean(vids);
            for (float v : maps[spk]) peak = std::max(peak, v);
        }
        int64_t h = corpus.manifest.spec.height, w = corpus.manifest.spec.width;
        for (const auto& [spk, map] : maps)
            write_normalized(strcat_("flow_spk", spk, ".pgm"), map, h, w, peak);
        std::cout << "wrote " << maps.size() << " speaker heatmaps to " << out_dir
                  << "\n";
        return 0;
    }

    // generic mode: every frames tensor below the directory
    std::vector<fs::path> files;
    for (const auto& p : fs::recursive_directory_iterator(video_dir))
        if (p.is_regular_file() && p.path().extension() == ".bin")
            files.push_back(p.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw DataError("no .bin videos under " + video_dir);
    std::vector<float> mean_map;
    int64_t h = 0, w = 0;
    std::vector<std::pair<std::string, std::vector<float>>> maps;
    for (const auto& f : files) {
        std::ifstream is(f.string(), std::ios::binary);
        Tensor<float> video = read_tensor<float>(is);
        std::vector<float> map = flow_magnitude(video);
        h = video.dim(2);
        w = video.dim(3);
        if (mean_map.empty()) mean_map.assign(map.size(), 0.0f);
        for (size_t i = 0; i < map.size(); i++) mean_map[i] += map[i];
        maps.emplace_back(f.stem().string(), std::move(map));
    }
    for (auto& v : mean_map) v /= static_cast<float>(files.size());
    float peak = 0;
    for (float v : mean_map) peak = std::max(peak, v);
    for (const auto& [name, map] : maps) {
        float p2 = peak;
        for (float v : map) p2 = std::max(p2, v);
        write_normalized(name + "_flow.pgm", map, h, w, p2);
    }
    write_normalized("mean_flow.pgm", mean_map, h, w, peak);
    std::cout << "wrote " << maps.size() + 1 << " heatmaps to " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale audio-driven video diffusion"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, sample_args, eval_args;
    std::string corpus_dir, resume_path, ckpt_path, ref_path, audio_path, video_dir,
        flow_out;
    double guidance = 1.5;

    CLI::App* synth = app.add_subcommand("synth-data", "generate the synthetic corpus");
    add_common(synth, synth_args);

    CLI::App* train = app.add_subcommand("train", "train the denoiser");
    add_common(train, train_args);
    train->add_option("--corpus", corpus_dir, "corpus directory")->required();
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    CLI::App* sample = app.add_subcommand("sample", "generate a video for an audio clip");
    add_common(sample, sample_args);
    sample->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    sample->add_option("--ref", ref_path, "reference image (.ppm or [C,H,W] tensor)")
        ->required();
    sample->add_option("--audio", audio_path, "16 kHz mono WAV")->required();
    CLI::Option* gopt = sample->add_option("--guidance", guidance, "guidance weight (>= 1)");

    CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against a corpus");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    eval->add_option("--corpus", corpus_dir, "corpus directory")->required();
    CLI::Option* gopt2 = eval->add_option("--guidance", guidance, "guidance weight (>= 1)");

    CLI::App* flow = app.add_subcommand("flow-map", "average optical-flow heatmaps");
    flow->add_option("--videos", video_dir, "corpus or directory of .bin videos")
        ->required();
    flow->add_option("--out", flow_out, "output directory")->required();

    try {
        app.parse(argc, argv);
        if (synth->parsed()) return cmd_synth_data(synth_args);
        if (train->parsed()) return cmd_train(train_args, corpus_dir, resume_path);
        if (sample->parsed())
            return cmd_sample(sample_args, ckpt_path, ref_path, audio_path, guidance,
                              gopt->count() > 0);
        if (eval->parsed())
            return cmd_eval(eval_args, ckpt_path, corpus_dir, guidance,
                            gopt2->count() > 0);
        if (flow->parsed()) return cmd_flow_map(video_dir, flow_out);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors -> 1
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
