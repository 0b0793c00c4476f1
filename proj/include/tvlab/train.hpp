#pragma once

#include <functional>
#include <map>

#include "tvlab/model.hpp"
#include "tvlab/prompt.hpp"
#include "tvlab/tasks.hpp"

namespace tvlab {

// One training episode: a k-shot prompt whose final example keeps its answer,
// with loss on every answer unit, answer-internal comma, and answer newline.
struct Episode {
    std::vector<TokenId> tokens;
    std::vector<uint8_t> target_mask;
    std::string task;
    int k = 0;
    bool fresh = false;
};

struct EpisodeConfig {
    std::vector<std::pair<std::string, double>> mixture;  // task -> weight, sums to 1
    std::vector<std::pair<int, double>> k_dist;           // shot count -> probability
    double p_fresh = 0.5;  // mapping tasks: chance of a freshly sampled bijection

    static std::vector<std::pair<int, double>> default_k_dist();
};

class EpisodeSampler {
public:
    EpisodeSampler(const TaskCorpus& corpus, EpisodeConfig config, int context_len);

    // Deterministic per seed.
    Episode sample(uint64_t seed) const;

    const Dataset& dataset(const std::string& task) const;

private:
    const TaskCorpus& corpus_;
    EpisodeConfig config_;
    int context_len_;
    std::map<std::string, Dataset> datasets_;
    std::vector<double> mixture_cdf_;
    std::vector<double> k_cdf_;

    Episode sample_fresh_mapping_episode(const TaskSpec& spec, int k, Rng& rng) const;
};

struct TrainConfig {
    int steps = 3000;
    int batch = 32;
    double peak_lr = 3e-4;
    double warmup_frac = 0.02;
    double final_lr_ratio = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int eval_every = 100;          // dev-gate cadence; 0 disables
    double target_dev_accuracy = 0.9;
    uint64_t seed = 0;
    size_t workers = 0;            // 0 = hardware concurrency
    int wave = 8;                  // gradient reduction width (fixed for determinism)

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

struct TrainLogEntry {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double dev_accuracy = -1.0;  // -1 when not evaluated at this step
};

struct TrainResult {
    bool early_stopped = false;
    bool diverged = false;
    double final_loss = 0.0;
    std::vector<TrainLogEntry> log;
};

using EpisodeFn = std::function<Episode(uint64_t seed)>;

// Runs the episodic training loop on `model` in place. `dev_gate`, when
// provided, returns the held-in few-shot dev accuracy used for early
// stopping. On divergence (non-finite loss) the model keeps the parameters of
// the last finite step.
TrainResult train(Model& model, const EpisodeFn& sample_episode, const TrainConfig& config,
                  const std::function<double(const Model&)>& dev_gate = {},
                  const std::function<void(const TrainLogEntry&)>& on_log = {});

inline TrainResult train(Model& model, const EpisodeSampler& sampler, const TrainConfig& config,
                         const std::function<double(const Model&)>& dev_gate = {},
                         const std::function<void(const TrainLogEntry&)>& on_log = {}) {
    return train(
        model, [&sampler](uint64_t seed) { return sampler.sample(seed); }, config, dev_gate,
        on_log);
}

double lr_at_step(const TrainConfig& config, int64_t step);

}  // namespace tvlab
