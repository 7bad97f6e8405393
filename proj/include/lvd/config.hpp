#pragma once

#include <string>
#include <vector>

#include "lvd/diffusion.hpp"
#include "lvd/synthdata.hpp"
#include "lvd/trainer.hpp"
#include "lvd/unet.hpp"

namespace lvd {

// Full run configuration: plain-text sections, strict keys, and per-value
// provenance so every run can write back exactly what it resolved.
struct RunConfig {
    // [data]
    int n_speakers = 10;
    int clips_per_speaker = 30;
    double clip_duration = 2.0;
    int height = 32;
    int width = 32;
    int neutral_every = 3;
    // [model]
    DenoiserConfig model;
    // [schedule]
    NoiseSchedule sched;
    // [train]
    TrainConfig train;
    // [sampler]
    SamplerConfig sampler;
    // [eval]
    int eval_batch = 6;
    uint64_t eval_lc_seed = 7;
    int eval_lc_steps = 400;

    uint64_t seed = 0;  // global; propagated into train/sampler seeds
};

enum class ValueSource { def, profile, file, flag };

// Parses `key = value` lines under [section] headers. Unknown sections or
// keys are rejected with the offending name.
RunConfig parse_config_text(const std::string& text, RunConfig base = {},
                            std::vector<std::pair<std::string, ValueSource>>* prov = nullptr);

// named presets: "paper" restores the published recipe, "desk" the scaled
// CPU profile (the defaults)
void apply_profile(RunConfig& cfg, const std::string& name,
                   std::vector<std::pair<std::string, ValueSource>>* prov = nullptr);

// one flag override in section.key=value form
void apply_override(RunConfig& cfg, const std::string& dotted_key,
                    const std::string& value,
                    std::vector<std::pair<std::string, ValueSource>>* prov = nullptr);

// fully resolved config with provenance comments
std::string resolved_config_text(
    const RunConfig& cfg,
    const std::vector<std::pair<std::string, ValueSource>>& prov);

// applies the global seed to the sub-configs that consume one
void propagate_seed(RunConfig& cfg);

}  // namespace lvd
