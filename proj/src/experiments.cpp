#include "tvlab/experiments.hpp"

#include <algorithm>
#include <map>

namespace tvlab {

std::vector<int> candidate_layers(int n_layers, int start, int stride) {
    check(stride >= 1, "layer stride must be >= 1");
    check(start >= 0, "layer start must be >= 0");
    std::vector<int> out;
    for (int l = start; l <= n_layers; l += stride) out.push_back(l);
    check(!out.empty(), "empty candidate layer grid");
    return out;
}

int argmax_layer(const std::vector<std::pair<int, double>>& table) {
    check(!table.empty(), "empty layer table");
    int best = table.front().first;
    double best_acc = table.front().second;
    for (const auto& [layer, acc] : table) {
        if (acc > best_acc || (acc == best_acc && layer < best)) {
            best = layer;
            best_acc = acc;
        }
    }
    return best;
}

int mode_layer(const std::vector<int>& best_layers) {
    check(!best_layers.empty(), "mode of an empty best-layer set is undefined");
    std::map<int, int> counts;
    for (int l : best_layers) counts[l] += 1;
    int best = best_layers.front();
    int best_count = 0;
    for (const auto& [layer, count] : counts) {  // ascending layers: ties go low
        if (count > best_count) {
            best = layer;
            best_count = count;
        }
    }
    return best;
}

namespace {

// Shared machinery: per query, extract vectors at all requested loci from one
// dummy-prompt forward pass, then grade one recon generation per locus.
struct ReconJob {
    int layer;
    TokenRole role;
    int example;
};

std::vector<std::vector<EvalRecord>> recon_over_loci(
    const Model& model, const TaskCorpus& corpus, const std::string& task, int k,
    const Dataset& demo_pool, const Dataset& queries, const std::vector<ReconJob>& jobs,
    uint64_t seed, size_t workers) {
    const auto& vocab = corpus.vocab();
    const auto& spec = corpus.spec(task);
    std::vector<std::vector<EvalRecord>> per_job(jobs.size());
    for (auto& v : per_job) v.resize(queries.size());

    parallel_for(queries.size(), workers, [&](size_t i) {
        const QAPair& query = queries[i];
        const uint64_t prompt_seed = derive_seed(seed, "record", task, i);
        auto source = build_prompt(vocab, task, demo_pool, k, query, true, prompt_seed);
        auto zero_layout = compose_prompt(vocab, task, {}, query, false);

        std::vector<TapPoint> taps;
        taps.reserve(jobs.size());
        for (const auto& job : jobs) {
            taps.push_back({layer_to_internal(model.config, job.layer),
                            static_cast<int>(locate_role(source, job.role, job.example))});
        }
        auto tapped = forward(model, source.tokens, taps, {}, false).tapped;
        for (size_t j = 0; j < jobs.size(); ++j) {
            TaskVector tv;
            tv.values = std::move(tapped[j]);
            tv.prov = {task, k, jobs[j].layer, jobs[j].role, jobs[j].example, prompt_seed};
            per_job[j][i] = recontextualize(model, vocab, zero_layout, tv,
                                            PatchMode::overwrite, spec.answer_units);
        }
    });
    return per_job;
}

}  // namespace

LayerSearchResult layer_search(const Model& model, const TaskCorpus& corpus,
                               const std::string& task, TokenRole role, int k,
                               const Dataset& demo_pool, const Dataset& dev_set,
                               const std::vector<int>& layers, uint64_t seed, size_t workers) {
    check(!layers.empty(), "layer_search: empty candidate grid");
    check(!dev_set.empty(), "layer_search: empty dev set");
    LayerSearchResult out;
    out.task = task;
    out.role = role;
    out.k = k;

    std::vector<ReconJob> jobs;
    for (int layer : layers) jobs.push_back({layer, role, k});
    auto per_job = recon_over_loci(model, corpus, task, k, demo_pool, dev_set, jobs, seed, workers);
    for (size_t j = 0; j < jobs.size(); ++j) {
        const double acc = aggregate_records(per_job[j]).accuracy();
        out.table.emplace_back(jobs[j].layer, acc);
        out.records.insert(out.records.end(), per_job[j].begin(), per_job[j].end());
    }
    out.best_layer = argmax_layer(out.table);
    for (const auto& [layer, acc] : out.table) {
        if (layer == out.best_layer) out.best_accuracy = acc;
    }
    return out;
}

SweepResult k_shot_sweep(const Model& model, const TaskCorpus& corpus, const std::string& task,
                         const std::vector<int>& ks, int layer, TokenRole role,
                         const Dataset& demo_pool, const Dataset& eval_set, uint64_t seed,
                         size_t workers) {
    check(!ks.empty(), "k_shot_sweep: empty k grid");
    SweepResult out;
    out.task = task;
    out.layer = layer;
    out.role = role;

    auto zero = run_setting(model, corpus, task, Setting::zero(), demo_pool, eval_set,
                            derive_seed(seed, "zero", task), workers);
    const double zero_acc = zero.aggregate.accuracy();
    out.records.insert(out.records.end(), zero.records.begin(), zero.records.end());

    for (int k : ks) {
        auto few = run_setting(model, corpus, task, Setting::few(k), demo_pool, eval_set,
                               derive_seed(seed, "few", task, static_cast<uint64_t>(k)), workers);
        auto recon =
            run_setting(model, corpus, task, Setting::recon(k, layer, role), demo_pool, eval_set,
                        derive_seed(seed, "recon", task, static_cast<uint64_t>(k)), workers);
        SweepCell cell;
        cell.k = k;
        cell.zero = zero_acc;
        cell.few = few.aggregate.accuracy();
        cell.recon = recon.aggregate.accuracy();
        if (cell.few > 0.0) {
            cell.ratio = cell.recon / cell.few;
        } else {
            cell.ratio = 0.0;
            out.warnings.push_back("task '" + task + "' k=" + std::to_string(k) +
                                   ": few-shot accuracy is 0, ratio set to 0");
        }
        out.cells.push_back(cell);
        out.records.insert(out.records.end(), few.records.begin(), few.records.end());
        out.records.insert(out.records.end(), recon.records.begin(), recon.records.end());
    }
    return out;
}

const std::vector<TokenRole>& locality_roles() {
    static const std::vector<TokenRole> roles = {
        TokenRole::Q, TokenRole::COLON_AFTER_Q, TokenRole::A, TokenRole::NEWLINE_BEFORE_A,
        TokenRole::COLON_PRE_ANSWER};
    return roles;
}

LocalityResult token_locality_grid(const Model& model, const TaskCorpus& corpus,
                                   const std::string& task, int k, const Dataset& demo_pool,
                                   const Dataset& dev_set, const Dataset& eval_set,
                                   const std::vector<int>& layers, uint64_t seed,
                                   size_t workers) {
    check(!dev_set.empty(), "token_locality_grid: empty dev set");
    check(!layers.empty(), "token_locality_grid: empty layer grid");
    LocalityResult out;
    out.task = task;
    out.k = k;
    out.layers = layers;
    const auto& roles = locality_roles();

    // present (role, example) columns; absent loci become explicit nulls
    std::vector<ReconJob> jobs;
    std::vector<std::pair<TokenRole, int>> null_columns;
    {
        Dataset probe_one(dev_set.begin(), dev_set.begin() + 1);
        auto probe_prompt = build_prompt(corpus.vocab(), task, demo_pool, k, probe_one[0], true,
                                         derive_seed(seed, "probe", task));
        for (TokenRole role : roles) {
            for (int ex = 0; ex <= k; ++ex) {
                if (has_role(probe_prompt, role, ex)) {
                    for (int layer : layers) jobs.push_back({layer, role, ex});
                } else {
                    null_columns.emplace_back(role, ex);
                }
            }
        }
    }

    auto per_job =
        recon_over_loci(model, corpus, task, k, demo_pool, dev_set, jobs, seed, workers);
    std::map<std::pair<int, std::pair<int, int>>, double> dev_acc;  // (layer,(role,ex)) -> acc
    for (size_t j = 0; j < jobs.size(); ++j) {
        dev_acc[{jobs[j].layer, {static_cast<int>(jobs[j].role), jobs[j].example}}] =
            aggregate_records(per_job[j]).accuracy();
        out.grid_records.insert(out.grid_records.end(), per_job[j].begin(), per_job[j].end());
    }
    for (int layer : layers) {
        for (TokenRole role : roles) {
            for (int ex = 0; ex <= k; ++ex) {
                LocalityCell cell;
                cell.role = role;
                cell.example = ex;
                cell.layer = layer;
                auto it = dev_acc.find({layer, {static_cast<int>(role), ex}});
                if (it != dev_acc.end()) cell.dev_accuracy = it->second;
                out.cells.push_back(cell);
            }
        }
    }

    // per-role layer search at the test-example locus, then the eval set
    for (TokenRole role : roles) {
        RoleSummary summary;
        summary.role = role;
        std::vector<std::pair<int, double>> table;
        for (int layer : layers) {
            table.emplace_back(layer, dev_acc.at({layer, {static_cast<int>(role), k}}));
        }
        summary.best_layer = argmax_layer(table);
        for (const auto& [layer, acc] : table) {
            if (layer == summary.best_layer) summary.dev_accuracy = acc;
        }
        Setting setting = Setting::recon(k, summary.best_layer, role);
        setting.example_index = k;
        auto eval = run_setting(model, corpus, task, setting, demo_pool, eval_set,
                                derive_seed(seed, "locality-eval", task,
                                            static_cast<uint64_t>(role)),
                                workers);
        summary.eval_accuracy = eval.aggregate.accuracy();
        out.eval_records.insert(out.eval_records.end(), eval.records.begin(), eval.records.end());
        out.roles.push_back(summary);
    }
    return out;
}

bool flag_hard_to_transfer(const SweepResult& sweep, double threshold, int k_ref) {
    for (const auto& cell : sweep.cells) {
        if (cell.k == k_ref) return cell.ratio < threshold;
    }
    fail("sweep for '" + sweep.task + "' lacks k=" + std::to_string(k_ref) +
         "; cannot evaluate the hard-to-transfer flag");
}

DecayResult per_unit_decay(const Model& model, const TaskCorpus& corpus, const std::string& task,
                           int k, int layer, const Dataset& demo_pool, const Dataset& eval_set,
                           uint64_t seed, size_t workers) {
    const auto& spec = corpus.spec(task);
    check(spec.answer_units >= 2, "per_unit_decay expects a task with at least 2 answer units");
    DecayResult out;
    out.task = task;
    out.k = k;
    out.layer = layer;

    auto few = run_setting(model, corpus, task, Setting::few(k), demo_pool, eval_set,
                           derive_seed(seed, "decay-few", task), workers);
    out.few_records = few.records;
    Dataset conditioning;
    for (size_t i = 0; i < eval_set.size(); ++i) {
        const auto& rec = few.records[i];
        const bool full = std::all_of(rec.unit_correct.begin(), rec.unit_correct.end(),
                                      [](uint8_t c) { return c != 0; });
        if (full) conditioning.push_back(eval_set[i]);
    }
    out.conditioning_size = conditioning.size();
    if (conditioning.empty()) {
        out.defined = false;  // explicitly undefined, not zeros
        return out;
    }
    auto recon = run_setting(model, corpus, task, Setting::recon(k, layer), demo_pool,
                             conditioning, derive_seed(seed, "decay-recon", task), workers);
    out.recon_records = recon.records;
    out.per_unit.assign(static_cast<size_t>(spec.answer_units), 0.0);
    for (const auto& rec : recon.records) {
        for (size_t u = 0; u < rec.unit_correct.size(); ++u) {
            out.per_unit[u] += rec.unit_correct[u];
        }
    }
    for (auto& v : out.per_unit) v /= static_cast<double>(conditioning.size());
    out.defined = true;
    return out;
}

}  // namespace tvlab
