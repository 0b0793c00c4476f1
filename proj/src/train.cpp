#include "tvlab/train.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

std::vector<std::pair<int, double>> EpisodeConfig::default_k_dist() {
    return {{0, 0.08}, {1, 0.18}, {2, 0.22}, {4, 0.22}, {8, 0.18}, {16, 0.09}, {32, 0.03}};
}

EpisodeSampler::EpisodeSampler(const TaskCorpus& corpus, EpisodeConfig config, int context_len)
    : corpus_(corpus), config_(std::move(config)), context_len_(context_len) {
    check(!config_.mixture.empty(), "episode mixture is empty");
    if (config_.k_dist.empty()) config_.k_dist = EpisodeConfig::default_k_dist();
    double wsum = 0.0;
    for (const auto& [task, w] : config_.mixture) {
        check(w >= 0.0, "negative mixture weight for '" + task + "'");
        wsum += w;
        mixture_cdf_.push_back(wsum);
    }
    check(std::abs(wsum - 1.0) < 1e-9, "mixture weights must sum to 1, got " + fmt_double(wsum));
    double ksum = 0.0;
    for (const auto& [k, p] : config_.k_dist) {
        check(k >= 0 && k <= 32, "k must be in [0, 32]");
        check(p >= 0.0, "negative k probability");
        ksum += p;
        k_cdf_.push_back(ksum);
    }
    check(std::abs(ksum - 1.0) < 1e-9, "k distribution must sum to 1, got " + fmt_double(ksum));
    for (const auto& [task, w] : config_.mixture) {
        const auto& spec = corpus_.spec(task);
        datasets_.emplace(task, corpus_.generate_dataset(spec, corpus_.dataset_size_for(spec),
                                                         /*seed=*/0));
    }
}

const Dataset& EpisodeSampler::dataset(const std::string& task) const {
    auto it = datasets_.find(task);
    if (it == datasets_.end()) fail("task not in the training mixture: '" + task + "'");
    return it->second;
}

namespace {

// Tokens contributed by one full example of this task.
int tokens_per_example(const TaskSpec& spec, const TaskCorpus& corpus) {
    int q = 1;
    switch (spec.family) {
        case TaskFamily::mapping:
        case TaskFamily::word_length: q = 1; break;
        case TaskFamily::repeat_x3: q = 3; break;
        case TaskFamily::mixed_chain: q = static_cast<int>(spec.sub.size()); break;
        default: q = spec.list_len; break;
    }
    (void)corpus;
    const int a = spec.answer_units;
    return 4 + 2 * q + 2 * a;  // Q : words \n A : words \n with commas
}

size_t pick_cdf(const std::vector<double>& cdf, double u) {
    for (size_t i = 0; i < cdf.size(); ++i) {
        if (u < cdf[i]) return i;
    }
    return cdf.size() - 1;
}

}  // namespace

Episode EpisodeSampler::sample_fresh_mapping_episode(const TaskSpec& spec, int k, Rng& rng) const {
    if (k < 1) k = 1;  // a fresh bijection is unusable without context
    MappingTable fresh = corpus_.sample_fresh_mapping(spec.mapping, rng.next_u64());
    const auto& vocab = corpus_.vocab();
    const auto& sources = fresh.sources();
    std::vector<QAPair> demos;
    demos.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        // with replacement: repeats make the lookup inferable from context
        TokenId s = sources[rng.index(sources.size())];
        demos.push_back({{vocab.word_of(s)}, {vocab.word_of(fresh.apply(s))}});
    }
    QAPair final_pair = demos[rng.index(demos.size())];
    auto layout = compose_prompt(vocab, spec.name, demos, final_pair, true);
    Episode ep;
    ep.tokens = layout.tokens;
    ep.target_mask = answer_loss_mask(layout);
    ep.task = spec.name;
    ep.k = k;
    ep.fresh = true;
    return ep;
}

Episode EpisodeSampler::sample(uint64_t seed) const {
    Rng rng(seed);
    const auto& [task, weight] = config_.mixture[pick_cdf(mixture_cdf_, rng.real())];
    (void)weight;
    const auto& spec = corpus_.spec(task);
    int k = config_.k_dist[pick_cdf(k_cdf_, rng.real())].first;

    // shrink k until the episode fits the context window
    const int per_example = tokens_per_example(spec, corpus_);
    while (k > 0 && 1 + (k + 1) * per_example > context_len_) --k;

    if (spec.family == TaskFamily::mapping && rng.real() < config_.p_fresh) {
        return sample_fresh_mapping_episode(spec, k, rng);
    }

    const Dataset& data = dataset(task);
    k = std::min<int>(k, static_cast<int>(data.size()) - 1);
    auto picked = rng.sample_without_replacement(data.size(), static_cast<size_t>(k) + 1);
    std::vector<QAPair> demos;
    for (int i = 0; i < k; ++i) demos.push_back(data[picked[static_cast<size_t>(i)]]);
    const QAPair& final_pair = data[picked[static_cast<size_t>(k)]];
    auto layout = compose_prompt(corpus_.vocab(), task, demos, final_pair, true);
    Episode ep;
    ep.tokens = layout.tokens;
    ep.target_mask = answer_loss_mask(layout);
    ep.task = task;
    ep.k = k;
    ep.fresh = false;
    return ep;
}

std::string TrainConfig::to_json() const {
    json j;
    j["steps"] = steps;
    j["batch"] = batch;
    j["peak_lr"] = peak_lr;
    j["warmup_frac"] = warmup_frac;
    j["final_lr_ratio"] = final_lr_ratio;
    j["beta1"] = beta1;
    j["beta2"] = beta2;
    j["adam_eps"] = adam_eps;
    j["grad_clip"] = grad_clip;
    j["eval_every"] = eval_every;
    j["target_dev_accuracy"] = target_dev_accuracy;
    j["seed"] = seed;
    j["wave"] = wave;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    TrainConfig c;
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
    c.final_lr_ratio = j.value("final_lr_ratio", c.final_lr_ratio);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.target_dev_accuracy = j.value("target_dev_accuracy", c.target_dev_accuracy);
    c.seed = j.value("seed", c.seed);
    c.wave = j.value("wave", c.wave);
    return c;
}

double lr_at_step(const TrainConfig& config, int64_t step) {
    const auto total = static_cast<double>(config.steps);
    const double warmup = std::max(1.0, std::ceil(config.warmup_frac * total));
    const auto s = static_cast<double>(step);
    if (s < warmup) return config.peak_lr * (s + 1.0) / warmup;
    const double t = (s - warmup) / std::max(1.0, total - warmup);
    const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * std::min(1.0, t)));
    const double floor_lr = config.peak_lr * config.final_lr_ratio;
    return floor_lr + (config.peak_lr - floor_lr) * cosine;
}

TrainResult train(Model& model, const EpisodeFn& sample_episode, const TrainConfig& config,
                  const std::function<double(const Model&)>& dev_gate,
                  const std::function<void(const TrainLogEntry&)>& on_log) {
    TrainResult result;
    if (config.steps <= 0) return result;
    check(config.batch >= 1, "batch must be >= 1");
    const int wave = std::max(1, config.wave);

    const auto dims = model.config.dims();
    std::vector<net::Weights<float>> wave_grads(static_cast<size_t>(std::min(wave, config.batch)));
    for (auto& g : wave_grads) g.allocate(dims);
    net::Weights<float> grad, m1, m2;
    grad.allocate(dims);
    m1.allocate(dims);
    m2.allocate(dims);

    // flattened views for the optimizer
    std::vector<std::pair<float*, size_t>> grad_parts, m1_parts, m2_parts, param_parts;
    auto collect = [](net::Weights<float>& w, std::vector<std::pair<float*, size_t>>& parts) {
        w.visit([&](const std::string&, float* p, Eigen::Index r, Eigen::Index c) {
            parts.emplace_back(p, static_cast<size_t>(r * c));
        });
    };
    collect(grad, grad_parts);
    collect(m1, m1_parts);
    collect(m2, m2_parts);
    collect(model.weights, param_parts);

    // per-wave-slot gradient views, aligned with grad_parts
    std::vector<std::vector<float*>> slot_parts(wave_grads.size());
    for (size_t s = 0; s < wave_grads.size(); ++s) {
        wave_grads[s].visit([&](const std::string&, float* p, Eigen::Index, Eigen::Index) {
            slot_parts[s].push_back(p);
        });
    }
    std::vector<double> part_sq(grad_parts.size());

    const int64_t start_step = model.step;
    for (int step = 0; step < config.steps; ++step) {
        grad.set_zero();
        double loss_sum = 0.0;
        int64_t mask_count = 0;
        std::vector<net::LossStats> stats(wave_grads.size());
        for (int wave_start = 0; wave_start < config.batch; wave_start += wave) {
            const int count = std::min(wave, config.batch - wave_start);
            parallel_for(static_cast<size_t>(count), config.workers, [&](size_t i) {
                wave_grads[i].set_zero();
                const uint64_t ep_seed = derive_seed(
                    config.seed, "episode", "",
                    static_cast<uint64_t>(start_step + step) * static_cast<uint64_t>(config.batch) +
                        static_cast<uint64_t>(wave_start) + i);
                Episode ep = sample_episode(ep_seed);
                stats[i] = net::forward_backward(model.weights, ep.tokens, ep.target_mask,
                                                 wave_grads[i]);
            });
            for (int i = 0; i < count; ++i) {
                loss_sum += stats[static_cast<size_t>(i)].loss_sum;
                mask_count += stats[static_cast<size_t>(i)].mask_count;
            }
            // reduce per element in slot order: the result does not depend on
            // how parts are distributed over workers
            parallel_for(grad_parts.size(), config.workers, [&](size_t part) {
                float* dst = grad_parts[part].first;
                const size_t n = grad_parts[part].second;
                for (int i = 0; i < count; ++i) {
                    const float* src = slot_parts[static_cast<size_t>(i)][part];
                    for (size_t j = 0; j < n; ++j) dst[j] += src[j];
                }
            });
        }

        const double loss = loss_sum / static_cast<double>(std::max<int64_t>(1, mask_count));
        if (!std::isfinite(loss)) {
            result.diverged = true;
            result.final_loss = loss;
            TrainLogEntry entry{model.step, loss, lr_at_step(config, step), -1.0};
            result.log.push_back(entry);
            if (on_log) on_log(entry);
            break;  // model still holds the last finite step's parameters
        }

        const auto inv_mask = static_cast<float>(1.0 / static_cast<double>(mask_count));
        parallel_for(grad_parts.size(), config.workers, [&](size_t part) {
            float* p = grad_parts[part].first;
            const size_t n = grad_parts[part].second;
            double sq = 0.0;
            for (size_t j = 0; j < n; ++j) {
                p[j] *= inv_mask;
                sq += static_cast<double>(p[j]) * static_cast<double>(p[j]);
            }
            part_sq[part] = sq;
        });
        double sq_norm = 0.0;
        for (double sq : part_sq) sq_norm += sq;  // fixed part order
        const double norm = std::sqrt(sq_norm);
        const float clip_scale =
            (config.grad_clip > 0.0 && norm > config.grad_clip)
                ? static_cast<float>(config.grad_clip / norm)
                : 1.0f;

        const double lr = lr_at_step(config, step);
        const auto t = static_cast<double>(step + 1);
        const double bc1 = 1.0 - std::pow(config.beta1, t);
        const double bc2 = 1.0 - std::pow(config.beta2, t);
        const auto b1 = static_cast<float>(config.beta1);
        const auto b2 = static_cast<float>(config.beta2);
        const auto eps = static_cast<float>(config.adam_eps);
        const auto alpha = static_cast<float>(lr * std::sqrt(bc2) / bc1);
        parallel_for(grad_parts.size(), config.workers, [&](size_t part) {
            float* g = grad_parts[part].first;
            float* mm = m1_parts[part].first;
            float* vv = m2_parts[part].first;
            float* w = param_parts[part].first;
            const size_t n = grad_parts[part].second;
            for (size_t j = 0; j < n; ++j) {
                const float gj = g[j] * clip_scale;
                mm[j] = b1 * mm[j] + (1.0f - b1) * gj;
                vv[j] = b2 * vv[j] + (1.0f - b2) * gj * gj;
                w[j] -= alpha * mm[j] / (std::sqrt(vv[j]) + eps);
            }
        });

        model.step += 1;
        result.final_loss = loss;

        const bool log_now = config.eval_every > 0 && (step + 1) % config.eval_every == 0;
        if (log_now || step + 1 == config.steps) {
            TrainLogEntry entry{model.step, loss, lr, -1.0};
            if (dev_gate && log_now) {
                entry.dev_accuracy = dev_gate(model);
            }
            result.log.push_back(entry);
            if (on_log) on_log(entry);
            if (entry.dev_accuracy >= config.target_dev_accuracy && entry.dev_accuracy >= 0.0) {
                result.early_stopped = true;
                break;
            }
        }
    }
    model.rng_state =
        "episodes:" + std::to_string(static_cast<uint64_t>(model.step) *
                                     static_cast<uint64_t>(config.batch));
    return result;
}

}  // namespace tvlab
