#pragma once

#include "lvd/config.hpp"
#include "lvd/metrics.hpp"

// Shared wiring between the CLI commands and the acceptance suite:
// generating evaluation clips from neutral reference frames and scoring
// them against the ground truth.

namespace lvd {

// one 16-frame window per item, generated from the clip's first (neutral)
// frame and the audio of its classification window; batched for throughput
std::vector<Tensor<float>> generate_eval_windows(
    const Corpus& corpus, const std::vector<int64_t>& items,
    const std::vector<int64_t>& starts, const Denoiser<float>& model,
    const NoiseSchedule& sched, const SamplerConfig& scfg, int batch);

struct EvalOutputs {
    MetricReport report;
    std::vector<int64_t> test_items;
    std::vector<int64_t> window_starts;
    std::vector<Tensor<float>> generated;  // [F,C,H,W], parallel to test_items
    std::vector<std::pair<uint64_t, double>> flow_cosine_per_speaker;
};

EvalOutputs run_eval(const Corpus& corpus, const Denoiser<float>& model,
                     const NoiseSchedule& sched, const SamplerConfig& scfg,
                     int batch, const LcOptions& lc_opt);

}  // namespace lvd
