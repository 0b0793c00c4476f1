// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria needing a trained model share one default-config run,
// cached under TVLAB_ACCEPTANCE_OUT (default: ./acceptance_out) so reruns
// skip training.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>

#include <nlohmann/json.hpp>

#include "oracles.hpp"
#include "tvlab/pipeline.hpp"
#include "tvlab/wire.hpp"

using namespace tvlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (size_t j = 0; j < v.size(); ++j) {
                if (v[j] < v[i]) ++less;
                if (v[j] == v[i]) ++equal;
            }
            r[i] = less + (equal + 1.0) / 2.0;  // average rank for ties
        }
        return r;
    };
    auto rx = ranks(xs), ry = ranks(ys);
    const auto n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double cov = 0, vx = 0, vy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    if (vx == 0 || vy == 0) return 0.0;
    return cov / std::sqrt(vx * vy);
}

std::map<std::string, uint64_t> tree_hashes(const fs::path& root) {
    std::map<std::string, uint64_t> out;
    for (const auto& entry : fs::recursive_directory_iterator(root)) {
        if (!entry.is_regular_file()) continue;
        out[fs::relative(entry.path(), root).generic_string()] = hash_file(entry.path());
    }
    return out;
}

struct Lab {
    fs::path out;
    PipelineConfig config;
    std::unique_ptr<Pipeline> pipeline;
    double train_seconds = 0.0;

    static Lab setup() {
        Lab lab;
        const char* env = std::getenv("TVLAB_ACCEPTANCE_OUT");
        lab.out = env ? fs::path(env) : fs::current_path() / "acceptance_out";
        json cfg_json = PipelineConfig::default_config_json();
        cfg_json["workers"] = 0;
        lab.config = PipelineConfig::from_json(cfg_json);
        lab.pipeline = std::make_unique<Pipeline>(lab.config, lab.out);

        const auto meta_path = lab.out / "acceptance_meta.json";
        const bool had_checkpoint = fs::exists(lab.out / "checkpoint.tvlb");
        const auto t0 = std::chrono::steady_clock::now();
        lab.pipeline->stage_train();  // cache-aware
        const auto t1 = std::chrono::steady_clock::now();
        const double elapsed = std::chrono::duration<double>(t1 - t0).count();
        if (!fs::exists(meta_path) || !had_checkpoint || elapsed > 60.0) {
            json meta;
            meta["train_seconds"] = elapsed;
            write_file_atomic(meta_path, meta.dump(2) + "\n");
        }
        lab.train_seconds = json::parse(read_text_file(meta_path)).at("train_seconds").get<double>();
        return lab;
    }

    const Model& model() { return pipeline->model(); }
    const TaskCorpus& corpus() { return pipeline->corpus(); }
    Dataset dataset(const std::string& task) {
        const auto& spec = corpus().spec(task);
        return corpus().generate_dataset(spec, corpus().dataset_size_for(spec), 0);
    }
    SplitResult split(const std::string& task) {
        auto data = dataset(task);
        const auto dev = std::min<size_t>(static_cast<size_t>(config.corpus.dev_size),
                                          data.size() - 1);
        return split_dev_eval(data, dev, derive_seed(config.seed, "split", task));
    }
};

// 1. Identity-patch equivalence, bitwise, 20 random (task, layer, k) triples.
Outcome criterion_identity_patch(Lab& lab) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(101);
    const auto& tasks = lab.config.corpus.tasks;
    for (int trial = 0; trial < 20; ++trial) {
        const auto& task = tasks[rng.index(tasks.size())];
        auto data = lab.dataset(task);
        const int k = static_cast<int>(rng.index(9));
        const int layer = static_cast<int>(rng.index(static_cast<size_t>(lab.model().config.n_layers) + 1));
        auto layout = build_prompt(lab.corpus().vocab(), task, data, k,
                                   data[rng.index(data.size())], true, rng.next_u64());
        const int pos = static_cast<int>(rng.index(layout.size()));
        auto base = forward(lab.model(), layout.tokens, {{layer, pos}}, {}, true);
        InterventionPlan plan;
        plan.entries.push_back({{layer, pos}, base.tapped[0], PatchMode::overwrite});
        auto patched = forward(lab.model(), layout.tokens, {{layer, pos}}, plan, true);
        if (base.logits != patched.logits) {
            return {false, "trial " + std::to_string(trial) + " (" + task + ", layer " +
                               std::to_string(layer) + ", k " + std::to_string(k) +
                               ") changed the logits"};
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 60.0) return {false, "took " + fmt_double(secs) + "s (budget 60s)"};
    return {true, "20/20 triples bit-identical in " + fmt_double(secs) + "s"};
}

// 2. Causal locality: earlier-position taps are bit-identical under patches.
Outcome criterion_causal_locality(Lab& lab) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(202);
    const auto& tasks = lab.config.corpus.tasks;
    const int L = lab.model().config.n_layers;
    for (int trial = 0; trial < 50; ++trial) {
        const auto& task = tasks[rng.index(tasks.size())];
        auto data = lab.dataset(task);
        auto layout = build_prompt(lab.corpus().vocab(), task, data, 2,
                                   data[rng.index(data.size())], true, rng.next_u64());
        const int pos = 1 + static_cast<int>(rng.index(layout.size() - 1));
        const int layer = static_cast<int>(rng.index(static_cast<size_t>(L) + 1));
        Eigen::VectorXf v(lab.model().config.d_model);
        for (int i = 0; i < v.size(); ++i) v(i) = static_cast<float>(rng.normal());
        std::vector<TapPoint> taps;
        for (int l = 0; l <= L; ++l) {
            for (int p = 0; p < pos; ++p) taps.push_back({l, p});
        }
        auto base = forward(lab.model(), layout.tokens, taps, {}, false);
        InterventionPlan plan;
        plan.entries.push_back({{layer, pos}, v, PatchMode::overwrite});
        auto patched = forward(lab.model(), layout.tokens, taps, plan, false);
        for (size_t t = 0; t < taps.size(); ++t) {
            if (base.tapped[t] != patched.tapped[t]) {
                return {false, "trial " + std::to_string(trial) + ": tap (layer " +
                                   std::to_string(taps[t].layer) + ", pos " +
                                   std::to_string(taps[t].pos) + ") moved under a patch at pos " +
                                   std::to_string(pos)};
            }
        }
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs >= 60.0) return {false, "took " + fmt_double(secs) + "s (budget 60s)"};
    return {true, "50/50 patches left earlier activations bit-identical in " + fmt_double(secs) +
                      "s"};
}

// 3. Final-layer patch: first-token logits equal unembed(final_norm(v)),
//    prompt-independence exact.
Outcome criterion_final_layer(Lab& lab) {
    Rng rng(303);
    const auto& w = lab.model().weights;
    const int top = lab.model().config.n_layers;
    auto data = lab.dataset("antonym");
    double worst_rel = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXf v(lab.model().config.d_model);
        for (int i = 0; i < v.size(); ++i) v(i) = static_cast<float>(rng.normal());

        Eigen::VectorXf expected;
        {
            const float mu = v.mean();
            const float var = (v.array() - mu).square().sum() / static_cast<float>(v.size());
            const float rstd = 1.0f / std::sqrt(var + static_cast<float>(net::kLnEps));
            Eigen::VectorXf y =
                (((v.array() - mu) * rstd) * w.lnf_g.array() + w.lnf_b.array()).matrix();
            expected = w.w_unembed.transpose() * y;
        }
        Eigen::VectorXf got[2];
        for (int p = 0; p < 2; ++p) {
            const QAPair& q = data[rng.index(data.size())];
            auto zero_layout = compose_prompt(lab.corpus().vocab(), "antonym", {}, q, false);
            InterventionPlan plan;
            plan.entries.push_back(
                {{top, static_cast<int>(zero_layout.size()) - 1}, v, PatchMode::overwrite});
            got[p] = forward(lab.model(), zero_layout.tokens, {}, plan, false).last_logits;
        }
        if (got[0] != got[1]) {
            return {false, "trial " + std::to_string(trial) + ": prompt-dependence detected"};
        }
        for (int i = 0; i < expected.size(); ++i) {
            const double denom = std::max({std::abs(double(expected(i))), std::abs(double(got[0](i))), 1e-8});
            worst_rel = std::max(worst_rel, std::abs(double(expected(i)) - double(got[0](i))) / denom);
        }
        if (worst_rel >= 1e-5) {
            return {false, "relative error " + fmt_double(worst_rel) + " >= 1e-5"};
        }
    }
    return {true, "20 vectors x 2 prompts; worst relative error " + fmt_double(worst_rel)};
}

// 4. Gradient check at the default architecture plus a monotone single-batch
//    overfit through the training loop.
Outcome criterion_gradients(Lab& lab) {
    net::Weights<double> w;
    w.cast_from(lab.model().weights);

    Rng rng(404);
    std::vector<TokenId> tokens;
    for (int i = 0; i < 24; ++i) {
        tokens.push_back(static_cast<TokenId>(rng.index(static_cast<size_t>(w.dims.vocab_size))));
    }
    std::vector<uint8_t> mask(tokens.size() - 1, 0);
    for (size_t i = 1; i < mask.size(); i += 2) mask[i] = 1;

    net::Weights<double> grad;
    grad.allocate(w.dims);
    grad.set_zero();
    net::forward_backward(w, tokens, mask, grad);

    struct View {
        double* data;
        size_t n;
    };
    std::vector<View> tensors, grads;
    w.visit([&](const std::string&, double* p, Eigen::Index r, Eigen::Index c) {
        tensors.push_back({p, static_cast<size_t>(r * c)});
    });
    grad.visit([&](const std::string&, double* p, Eigen::Index r, Eigen::Index c) {
        grads.push_back({p, static_cast<size_t>(r * c)});
    });
    const double h = 1e-5;
    size_t checked = 0;
    double worst = 0.0;
    for (size_t t = 0; t < tensors.size(); ++t) {
        const size_t samples = std::min<size_t>(tensors[t].n, 2);
        for (size_t s = 0; s < samples; ++s) {
            const size_t idx = tensors[t].n <= 2 ? s : rng.index(tensors[t].n);
            double* p = tensors[t].data + idx;
            const double orig = *p;
            *p = orig + h;
            const double up = net::loss_only(w, tokens, mask).loss_sum;
            *p = orig - h;
            const double down = net::loss_only(w, tokens, mask).loss_sum;
            *p = orig;
            const double fd = (up - down) / (2 * h);
            const double an = grads[t].data[idx];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            const double rel = std::abs(fd - an) / denom;
            worst = std::max(worst, rel);
            ++checked;
            if (rel >= 1e-3) {
                return {false, "finite-difference mismatch (rel " + fmt_double(rel) + ")"};
            }
        }
    }
    if (checked < 100) return {false, "only " + std::to_string(checked) + " parameters sampled"};

    // single-batch overfit via the real training loop
    ModelConfig small;
    small.n_layers = 2;
    small.d_model = 64;
    small.n_heads = 2;
    small.context_len = 64;
    small.vocab_size = lab.model().config.vocab_size;
    Model toy = init_model(small, 7);
    std::vector<TokenId> batch_tokens;
    for (int i = 0; i < 20; ++i) {
        batch_tokens.push_back(
            static_cast<TokenId>(rng.index(static_cast<size_t>(small.vocab_size))));
    }
    Episode fixed;
    fixed.tokens = batch_tokens;
    fixed.target_mask.assign(batch_tokens.size() - 1, 1);
    TrainConfig tc;
    tc.steps = 50;
    tc.batch = 4;
    tc.peak_lr = 1e-3;
    tc.warmup_frac = 0.0;
    tc.final_lr_ratio = 1.0;
    tc.eval_every = 1;
    tc.target_dev_accuracy = 2.0;
    std::vector<double> losses;
    train(
        toy, [&](uint64_t) { return fixed; }, tc, {},
        [&](const TrainLogEntry& e) { losses.push_back(e.loss); });
    for (size_t i = 1; i < losses.size(); ++i) {
        if (losses[i] > losses[i - 1] + 1e-9) {
            return {false, "overfit loss rose at step " + std::to_string(i) + " (" +
                               fmt_double(losses[i - 1]) + " -> " + fmt_double(losses[i]) + ")"};
        }
    }
    if (losses.back() >= losses.front()) return {false, "overfit loss did not decrease"};
    return {true, std::to_string(checked) + " params within 1e-3 (worst " + fmt_double(worst) +
                      "); overfit loss " + fmt_double(losses.front()) + " -> " +
                      fmt_double(losses.back()) + " monotonically over 50 steps"};
}

// 5. Task-oracle equivalence over every generated pair of every task.
Outcome criterion_oracles(Lab& lab) {
    size_t pairs = 0;
    for (const auto& task : lab.config.corpus.tasks) {
        const auto& spec = lab.corpus().spec(task);
        auto data = lab.dataset(task);
        for (const auto& pair : data) {
            if (oracle::answer(lab.corpus(), spec, pair.query) != pair.answer) {
                return {false, "task '" + task + "': oracle disagrees on a generated pair"};
            }
            ++pairs;
        }
    }
    return {true, std::to_string(pairs) + " pairs across " +
                      std::to_string(lab.config.corpus.tasks.size()) + " tasks match the oracles"};
}

// 6. Toy ICL gate: 8-shot eval accuracy >= 0.9 on held-in mapping and
//    choose-position tasks, training budget <= 60 min.
Outcome criterion_icl_gate(Lab& lab) {
    const std::vector<std::string> mapping = {"antonym", "country-capital", "english-french",
                                              "product-company"};
    const std::vector<std::string> choose = {"choose_first_of_5", "choose_middle_of_5",
                                             "choose_last_of_5"};
    auto group_accuracy = [&](const std::vector<std::string>& tasks) {
        Aggregate agg;
        for (const auto& task : tasks) {
            auto result = run_setting(lab.model(), lab.corpus(), task, Setting::few(8),
                                      lab.dataset(task), lab.split(task).eval,
                                      derive_seed(lab.config.seed, "gate-eval", task), 0);
            agg.correct_units += result.aggregate.correct_units;
            agg.total_units += result.aggregate.total_units;
        }
        return agg.accuracy();
    };
    const double map_acc = group_accuracy(mapping);
    const double choose_acc = group_accuracy(choose);
    const bool time_ok = lab.train_seconds <= 3600.0;
    const bool pass = map_acc >= 0.9 && choose_acc >= 0.9 && time_ok;
    return {pass, "mapping " + fmt_double(map_acc) + ", choose-position " +
                      fmt_double(choose_acc) + ", training " + fmt_double(lab.train_seconds) +
                      "s" + (time_ok ? "" : " (over 60 min)")};
}

// 7. Evidence accrual on mapping tasks: Spearman rho > 0 over k in
//    {1,2,4,8,16,32} and recon(32) - recon(1) >= 0.10 on at least two tasks.
Outcome criterion_accrual(Lab& lab) {
    const std::vector<int> ks = {1, 2, 4, 8, 16, 32};
    int passing = 0;
    std::string detail;
    for (const std::string task : {"antonym", "english-french", "country-capital",
                                   "product-company"}) {
        auto split = lab.split(task);
        auto search = layer_search(lab.model(), lab.corpus(), task, TokenRole::COLON_PRE_ANSWER, 8,
                                   lab.dataset(task), split.dev,
                                   candidate_layers(lab.model().config.n_layers),
                                   derive_seed(lab.config.seed, "accrual-search", task), 0);
        auto sweep = k_shot_sweep(lab.model(), lab.corpus(), task, ks, search.best_layer,
                                  TokenRole::COLON_PRE_ANSWER, lab.dataset(task), split.eval,
                                  derive_seed(lab.config.seed, "accrual-sweep", task), 0);
        std::vector<double> xs, recon;
        double r1 = 0, r32 = 0;
        for (const auto& cell : sweep.cells) {
            xs.push_back(cell.k);
            recon.push_back(cell.recon);
            if (cell.k == 1) r1 = cell.recon;
            if (cell.k == 32) r32 = cell.recon;
        }
        const double rho = spearman_rho(xs, recon);
        const bool ok = rho > 0.0 && (r32 - r1) >= 0.10;
        if (ok) ++passing;
        detail += task + " (L" + std::to_string(search.best_layer) + "): rho " + fmt_double(rho) +
                  ", recon 1->32: " + fmt_double(r1) + "->" + fmt_double(r32) +
                  (ok ? " OK; " : " no; ");
    }
    return {passing >= 2, detail + std::to_string(passing) + "/4 tasks show accrual"};
}

// 8. Locality: the pre-answer colon beats every other format token by >= 20
//    accuracy points on >= 2 tasks while task identity stays decodable
//    (> 3x chance) at those non-colon loci.
Outcome criterion_locality(Lab& lab) {
    const std::vector<std::string> candidates = {"antonym", "english-french", "choose_first_of_5",
                                                 "count_color_in_3"};
    const auto layers = candidate_layers(lab.model().config.n_layers);
    int passing = 0;
    std::string detail;
    std::set<std::pair<std::string, int>> noncolon_loci;
    std::vector<LocalityResult> results;
    for (const auto& task : candidates) {
        auto split = lab.split(task);
        auto result = token_locality_grid(lab.model(), lab.corpus(), task, 8, lab.dataset(task),
                                          split.dev, split.eval, layers,
                                          derive_seed(lab.config.seed, "loc", task), 0);
        double colon = 0.0, best_other = 0.0;
        for (const auto& role : result.roles) {
            if (role.role == TokenRole::COLON_PRE_ANSWER) {
                colon = role.eval_accuracy;
            } else {
                best_other = std::max(best_other, role.eval_accuracy);
            }
        }
        const bool ok = colon - best_other >= 0.20;
        if (ok) {
            ++passing;
            for (const auto& role : result.roles) {
                if (role.role != TokenRole::COLON_PRE_ANSWER) {
                    noncolon_loci.emplace(role_name(role.role), role.best_layer);
                }
            }
        }
        detail += task + ": colon " + fmt_double(colon) + " vs other " + fmt_double(best_other) +
                  (ok ? " OK; " : " no; ");
        results.push_back(std::move(result));
    }
    if (passing < 2) return {false, detail + "locality gap on " + std::to_string(passing) + " tasks"};

    // probe decodability at the non-colon loci of the passing tasks
    std::vector<int> probe_layers;
    for (const auto& [role, layer] : noncolon_loci) {
        if (std::find(probe_layers.begin(), probe_layers.end(), layer) == probe_layers.end()) {
            probe_layers.push_back(layer);
        }
    }
    std::sort(probe_layers.begin(), probe_layers.end());
    auto grid = decode_grid(lab.model(), lab.corpus(), TaskCorpus::simple_tasks(), probe_layers,
                            locality_roles(), 8, 100, derive_seed(lab.config.seed, "loc-probe"), 0);
    const double floor = 3.0 * grid.chance;
    for (const auto& [role, layer] : noncolon_loci) {
        bool found = false;
        for (const auto& cell : grid.cells) {
            if (cell.layer == layer && role_name(cell.role) == role && cell.example == 8 &&
                cell.accuracy) {
                found = true;
                detail += role + "@L" + std::to_string(layer) + " decode " +
                          fmt_double(*cell.accuracy) + "; ";
                if (*cell.accuracy <= floor) {
                    return {false, detail + "decoding at " + role + "@L" + std::to_string(layer) +
                                       " not above 3x chance (" + fmt_double(floor) + ")"};
                }
            }
        }
        if (!found) return {false, detail + "missing probe cell for " + role};
    }
    return {true, detail + std::to_string(passing) + " tasks pass with decodable identity"};
}

// 9. Probe sanity bounds.
Outcome criterion_probe_sanity(Lab&) {
    const int n_classes = 14, dim = 32, n_per_class = 40;
    ProbeDataset ds;
    for (int c = 0; c < n_classes; ++c) ds.labels.push_back("task" + std::to_string(c));
    Rng rng(909);
    for (int c = 0; c < n_classes; ++c) {
        for (int i = 0; i < n_per_class; ++i) {
            Eigen::VectorXf x = Eigen::VectorXf::Zero(dim);
            x(c) = 2.0f;
            for (int d = 0; d < dim; ++d) x(d) += 0.05f * static_cast<float>(rng.normal());
            ds.examples.push_back({x, c});
        }
    }
    // separability witness: along axis c, class c sits above everyone else
    for (int c = 0; c < n_classes; ++c) {
        double own_min = 1e30, other_max = -1e30;
        for (const auto& e : ds.examples) {
            (e.label == c ? own_min = std::min(own_min, double(e.x(c)))
                          : other_max = std::max(other_max, double(e.x(c))));
        }
        if (own_min - other_max <= 0.0) return {false, "synthetic data not separable"};
    }
    auto probe = train_probe(ds, 20, 256, 0.05, 0.25, 1);
    if (probe.test_accuracy != 1.0) {
        return {false, "separable accuracy " + fmt_double(probe.test_accuracy) + " != 1.0"};
    }
    double mean_acc = 0.0;
    for (int s = 0; s < 10; ++s) {
        auto shuffled = ds;
        Rng srng(derive_seed(1000, "shuffle", "", static_cast<uint64_t>(s)));
        std::vector<int> labels;
        for (const auto& e : shuffled.examples) labels.push_back(e.label);
        srng.shuffle(labels);
        for (size_t i = 0; i < shuffled.examples.size(); ++i) shuffled.examples[i].label = labels[i];
        mean_acc += train_probe(shuffled, 20, 256, 0.05, 0.25, static_cast<uint64_t>(s)).test_accuracy;
    }
    mean_acc /= 10.0;
    const double chance = 1.0 / n_classes;
    if (std::abs(mean_acc - chance) > 0.05) {
        return {false, "shuffled-label accuracy " + fmt_double(mean_acc) + " not within 5 points of " +
                           fmt_double(chance)};
    }
    return {true, "separable 1.0; shuffled " + fmt_double(mean_acc) + " vs chance " +
                      fmt_double(chance)};
}

// 10. Determinism audit: identical config + seed, different worker counts,
//     byte-identical artifact trees including SVGs.
Outcome criterion_determinism(Lab&) {
    auto config = PipelineConfig::smoke_config_json();
    const auto base = fs::temp_directory_path() / "tvlab_acceptance_det";
    fs::remove_all(base);
    const auto dir1 = base / "w1";
    const auto dir2 = base / "w2";
    {
        auto j = config;
        j["workers"] = 1;
        Pipeline p(PipelineConfig::from_json(j), dir1);
        p.run();
    }
    {
        auto j = config;
        j["workers"] = 2;
        Pipeline p(PipelineConfig::from_json(j), dir2);
        p.run();
    }
    auto h1 = tree_hashes(dir1);
    auto h2 = tree_hashes(dir2);
    if (h1.size() != h2.size()) {
        return {false, "artifact trees differ in file count (" + std::to_string(h1.size()) +
                           " vs " + std::to_string(h2.size()) + ")"};
    }
    size_t svgs = 0;
    for (const auto& [path, hash] : h1) {
        auto it = h2.find(path);
        if (it == h2.end() || it->second != hash) {
            return {false, "file differs across worker counts: " + path};
        }
        if (path.size() > 4 && path.substr(path.size() - 4) == ".svg") ++svgs;
    }
    // and a rerun over an existing tree leaves every byte unchanged
    {
        auto j = config;
        j["workers"] = 2;
        Pipeline p(PipelineConfig::from_json(j), dir1);
        p.run();
    }
    if (tree_hashes(dir1) != h1) return {false, "rerun changed bytes under caching"};
    auto problems = verify_artifacts(dir1);
    if (!problems.empty()) return {false, "verify pass found " + problems[0]};
    fs::remove_all(base);
    return {true, std::to_string(h1.size()) + " files (incl. " + std::to_string(svgs) +
                      " SVGs) byte-identical across worker counts and reruns; verify clean"};
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        Outcome (*run)(Lab&);
    };
    const Entry entries[] = {
        {1, "identity-patch equivalence", criterion_identity_patch},
        {2, "causal locality", criterion_causal_locality},
        {3, "final-layer patch equivalence", criterion_final_layer},
        {4, "gradient check and single-batch overfit", criterion_gradients},
        {5, "task-oracle equivalence", criterion_oracles},
        {6, "toy ICL gate", criterion_icl_gate},
        {7, "evidence accrual on mapping tasks", criterion_accrual},
        {8, "temporal locality with decodable identity", criterion_locality},
        {9, "probe sanity bounds", criterion_probe_sanity},
        {10, "determinism audit", criterion_determinism},
    };

    std::printf("acceptance: preparing corpus and checkpoint (cached when available)\n");
    Lab lab = Lab::setup();
    std::printf("acceptance: checkpoint ready (train stage %.1fs)\n\n", lab.train_seconds);

    int failures = 0;
    for (const auto& entry : entries) {
        Outcome outcome;
        try {
            outcome = entry.run(lab);
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        std::printf("[%s] %2d. %s — %s\n", outcome.pass ? "PASS" : "FAIL", entry.id, entry.name,
                    outcome.detail.c_str());
        std::fflush(stdout);
        if (!outcome.pass) ++failures;
    }
    if (failures > 0) {
        std::printf("\nacceptance: %d criterion(s) FAILED\n", failures);
        return 1;
    }
    std::printf("\nacceptance: all criteria passed\n");
    return 0;
}
