#include "tvlab/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace tvlab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

const json& require_key(const json& j, const std::string& path, const char* key) {
    if (!j.is_object()) fail("config: " + path + " must be an object");
    if (!j.contains(key)) fail("config: missing key " + path + "." + key);
    return j.at(key);
}

template <typename T>
T value_or(const json& j, const std::string& path, const char* key, T fallback) {
    if (!j.is_object()) fail("config: " + path + " must be an object");
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail("config: " + path + "." + key + " has the wrong type");
    }
}

std::vector<std::string> string_list(const json& j, const std::string& path) {
    try {
        return j.get<std::vector<std::string>>();
    } catch (const json::exception&) {
        fail("config: " + path + " must be an array of strings");
    }
}

std::vector<int> int_list(const json& j, const std::string& path) {
    try {
        return j.get<std::vector<int>>();
    } catch (const json::exception&) {
        fail("config: " + path + " must be an array of integers");
    }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& j) {
    PipelineConfig cfg;
    cfg.raw = j;
    // worker count steers execution, never results; keep it out of manifests
    // and cache keys
    cfg.raw.erase("workers");
    cfg.seed = value_or<uint64_t>(j, "$", "seed", 0);
    cfg.workers = value_or<size_t>(j, "$", "workers", 0);

    const json& corpus = require_key(j, "$", "corpus");
    cfg.corpus.seed = cfg.seed;
    const json vocab = value_or<json>(corpus, "$.corpus", "vocab", json::object());
    cfg.corpus.vocab.colors = value_or<int>(vocab, "$.corpus.vocab", "colors", 16);
    cfg.corpus.vocab.animals = value_or<int>(vocab, "$.corpus.vocab", "animals", 24);
    cfg.corpus.vocab.fruits = value_or<int>(vocab, "$.corpus.vocab", "fruits", 16);
    cfg.corpus.vocab.objects = value_or<int>(vocab, "$.corpus.vocab", "objects", 192);
    cfg.corpus.vocab.filler = value_or<int>(vocab, "$.corpus.vocab", "filler", 192);
    cfg.corpus.vocab.max_words = value_or<int>(vocab, "$.corpus.vocab", "max_words", 2048);
    cfg.corpus.mapping_pairs = value_or<int>(corpus, "$.corpus", "mapping_pairs", 96);
    cfg.corpus.dataset_size = value_or<int>(corpus, "$.corpus", "dataset_size", 512);
    cfg.corpus.dev_size = value_or<int>(corpus, "$.corpus", "dev_size", 50);
    cfg.corpus.tasks = string_list(require_key(corpus, "$.corpus", "tasks"), "$.corpus.tasks");
    check(!cfg.corpus.tasks.empty(), "config: $.corpus.tasks must not be empty");
    if (corpus.contains("dataset_size_overrides")) {
        for (const auto& [task, size] : corpus.at("dataset_size_overrides").items()) {
            cfg.corpus.dataset_size_overrides[task] = size.get<int>();
        }
    }

    const json model = value_or<json>(j, "$", "model", json::object());
    cfg.model.n_layers = value_or<int>(model, "$.model", "n_layers", 8);
    cfg.model.d_model = value_or<int>(model, "$.model", "d_model", 256);
    cfg.model.n_heads = value_or<int>(model, "$.model", "n_heads", 4);
    cfg.model.mlp_ratio = value_or<int>(model, "$.model", "mlp_ratio", 4);
    cfg.model.context_len = value_or<int>(model, "$.model", "context_len", 640);
    cfg.model.tap_pre_block = value_or<bool>(model, "$.model", "tap_pre_block", false);

    const json train = value_or<json>(j, "$", "train", json::object());
    cfg.train = TrainConfig::from_json(train.dump());
    cfg.train.seed = cfg.seed;
    cfg.train.workers = cfg.workers;
    cfg.gate_tasks = value_or<std::vector<std::string>>(
        train, "$.train", "gate_tasks",
        {"antonym", "english-french", "choose_first_of_5", "choose_last_of_5"});
    cfg.gate_k = value_or<int>(train, "$.train", "gate_k", 8);

    cfg.episodes.p_fresh = value_or<double>(train, "$.train", "p_fresh", 0.5);
    if (train.contains("k_dist")) {
        for (const auto& pair : train.at("k_dist")) {
            cfg.episodes.k_dist.emplace_back(pair.at(0).get<int>(), pair.at(1).get<double>());
        }
    } else {
        cfg.episodes.k_dist = EpisodeConfig::default_k_dist();
    }
    {
        std::map<std::string, double> weights;
        if (train.contains("mixture")) {
            for (const auto& [task, w] : train.at("mixture").items()) {
                weights[task] = w.get<double>();
            }
        } else {
            for (const auto& task : cfg.corpus.tasks) weights[task] = 1.0;
            for (const char* m : {"antonym", "english-french", "country-capital", "product-company"}) {
                if (weights.count(m)) weights[m] = 2.0;
            }
        }
        double sum = 0.0;
        for (const auto& [task, w] : weights) sum += w;
        check(sum > 0.0, "config: $.train.mixture has zero total weight");
        for (const auto& [task, w] : weights) {
            cfg.episodes.mixture.emplace_back(task, w / sum);
        }
    }

    const json search = value_or<json>(j, "$", "search", json::object());
    cfg.search.tasks =
        search.contains("tasks")
            ? string_list(search.at("tasks"), "$.search.tasks")
            : cfg.corpus.tasks;
    cfg.search.k = value_or<int>(search, "$.search", "k", 8);
    cfg.search.start = value_or<int>(search, "$.search", "start", 0);
    cfg.search.stride = value_or<int>(search, "$.search", "stride", 1);

    const json sweep = value_or<json>(j, "$", "sweep", json::object());
    cfg.sweep.tasks = sweep.contains("tasks") ? string_list(sweep.at("tasks"), "$.sweep.tasks")
                                              : std::vector<std::string>{};
    if (sweep.contains("ks")) cfg.sweep.ks = int_list(sweep.at("ks"), "$.sweep.ks");

    const json locality = value_or<json>(j, "$", "locality", json::object());
    cfg.locality.tasks = locality.contains("tasks")
                             ? string_list(locality.at("tasks"), "$.locality.tasks")
                             : std::vector<std::string>{};
    cfg.locality.k = value_or<int>(locality, "$.locality", "k", 8);

    const json probes = value_or<json>(j, "$", "probes", json::object());
    cfg.probes.tasks = probes.contains("tasks")
                           ? string_list(probes.at("tasks"), "$.probes.tasks")
                           : std::vector<std::string>{};
    cfg.probes.shared_vocab_tasks =
        probes.contains("shared_vocab_tasks")
            ? string_list(probes.at("shared_vocab_tasks"), "$.probes.shared_vocab_tasks")
            : std::vector<std::string>{};
    cfg.probes.k = value_or<int>(probes, "$.probes", "k", 8);
    cfg.probes.n_per_task = value_or<int>(probes, "$.probes", "n_per_task", 100);

    const json decay = value_or<json>(j, "$", "decay", json::object());
    cfg.decay.tasks = decay.contains("tasks") ? string_list(decay.at("tasks"), "$.decay.tasks")
                                              : std::vector<std::string>{};
    cfg.decay.k = value_or<int>(decay, "$.decay", "k", 8);

    const json analysis = value_or<json>(j, "$", "analysis", json::object());
    cfg.analysis.tasks = analysis.contains("tasks")
                             ? string_list(analysis.at("tasks"), "$.analysis.tasks")
                             : std::vector<std::string>{};
    if (analysis.contains("ks")) cfg.analysis.ks = int_list(analysis.at("ks"), "$.analysis.ks");
    cfg.analysis.n_samples = value_or<int>(analysis, "$.analysis", "n_samples", 24);

    // cross-stage requirements
    auto in_corpus = [&](const std::string& task, const char* where) {
        check(std::find(cfg.corpus.tasks.begin(), cfg.corpus.tasks.end(), task) !=
                  cfg.corpus.tasks.end(),
              std::string("config: task '") + task + "' in " + where +
                  " is not listed in $.corpus.tasks");
    };
    for (const auto& t : cfg.search.tasks) in_corpus(t, "$.search.tasks");
    for (const auto& t : cfg.sweep.tasks) in_corpus(t, "$.sweep.tasks");
    for (const auto& t : cfg.locality.tasks) in_corpus(t, "$.locality.tasks");
    for (const auto& t : cfg.probes.tasks) in_corpus(t, "$.probes.tasks");
    for (const auto& t : cfg.decay.tasks) in_corpus(t, "$.decay.tasks");
    for (const auto& t : cfg.analysis.tasks) in_corpus(t, "$.analysis.tasks");
    for (const auto& t : cfg.gate_tasks) in_corpus(t, "$.train.gate_tasks");
    auto searched = [&](const std::string& task, const char* where) {
        check(std::find(cfg.search.tasks.begin(), cfg.search.tasks.end(), task) !=
                  cfg.search.tasks.end(),
              std::string("config: task '") + task + "' in " + where +
                  " needs a best layer; add it to $.search.tasks");
    };
    for (const auto& t : cfg.sweep.tasks) searched(t, "$.sweep.tasks");
    for (const auto& t : cfg.decay.tasks) searched(t, "$.decay.tasks");
    for (const auto& t : cfg.analysis.tasks) searched(t, "$.analysis.tasks");
    return cfg;
}

json PipelineConfig::default_config_json() {
    json j;
    j["seed"] = 0;
    j["workers"] = 0;

    std::vector<std::string> all_tasks;
    for (const auto& group :
         {TaskCorpus::simple_tasks(), TaskCorpus::longer_tasks(), TaskCorpus::mixed_tasks()}) {
        all_tasks.insert(all_tasks.end(), group.begin(), group.end());
    }
    j["corpus"] = {{"vocab",
                    {{"colors", 16},
                     {"animals", 24},
                     {"fruits", 16},
                     {"objects", 192},
                     {"filler", 192},
                     {"max_words", 2048}}},
                   {"mapping_pairs", 96},
                   {"dataset_size", 512},
                   {"dev_size", 50},
                   {"tasks", all_tasks}};
    j["model"] = {{"n_layers", 8},   {"d_model", 256},     {"n_heads", 4},
                  {"mlp_ratio", 4},  {"context_len", 640}, {"tap_pre_block", false}};
    j["train"] = {{"steps", 3000},
                  {"batch", 32},
                  {"peak_lr", 3e-4},
                  {"warmup_frac", 0.02},
                  {"eval_every", 50},
                  {"target_dev_accuracy", 0.9},
                  {"p_fresh", 0.5},
                  {"gate_tasks",
                   {"antonym", "english-french", "choose_first_of_5", "choose_last_of_5"}},
                  {"gate_k", 8}};
    j["search"] = {{"k", 8}, {"start", 0}, {"stride", 1}};
    j["sweep"] = {{"tasks", TaskCorpus::simple_tasks()}, {"ks", {0, 1, 2, 4, 8, 16, 32}}};
    j["locality"] = {
        {"tasks", {"antonym", "english-french", "choose_first_of_5", "count_color_in_3"}},
        {"k", 8}};
    j["probes"] = {{"tasks", TaskCorpus::simple_tasks()},
                   {"shared_vocab_tasks", TaskCorpus::shared_vocab_list_tasks()},
                   {"k", 8},
                   {"n_per_task", 100}};
    std::vector<std::string> decay_tasks = TaskCorpus::longer_tasks();
    for (const auto& t : TaskCorpus::mixed_tasks()) decay_tasks.push_back(t);
    j["decay"] = {{"tasks", decay_tasks}, {"k", 8}};
    j["analysis"] = {{"tasks", TaskCorpus::simple_tasks()},
                     {"ks", {0, 1, 2, 4, 8, 16, 32}},
                     {"n_samples", 24}};
    return j;
}

json PipelineConfig::smoke_config_json() {
    json j;
    j["seed"] = 0;
    j["workers"] = 0;
    const std::vector<std::string> tasks = {"antonym",          "english-french",
                                            "choose_first_of_5", "count_color_in_3",
                                            "reverse_all_of_3",  "antonym+product-company"};
    j["corpus"] = {{"vocab",
                    {{"colors", 6},
                     {"animals", 8},
                     {"fruits", 6},
                     {"objects", 32},
                     {"filler", 32},
                     {"max_words", 512}}},
                   {"mapping_pairs", 12},
                   {"dataset_size", 24},
                   {"dev_size", 6},
                   {"tasks", tasks}};
    j["model"] = {{"n_layers", 2},  {"d_model", 32},      {"n_heads", 2},
                  {"mlp_ratio", 4}, {"context_len", 192}, {"tap_pre_block", false}};
    j["train"] = {{"steps", 20},
                  {"batch", 8},
                  {"peak_lr", 1e-3},
                  {"eval_every", 0},
                  {"gate_tasks", {"antonym"}},
                  {"gate_k", 2}};
    j["search"] = {{"k", 2}, {"start", 0}, {"stride", 1}};
    j["sweep"] = {{"tasks", {"antonym", "count_color_in_3"}}, {"ks", {0, 1, 2}}};
    j["locality"] = {{"tasks", {"antonym"}}, {"k", 2}};
    j["probes"] = {{"tasks", tasks}, {"shared_vocab_tasks", json::array()}, {"k", 2}, {"n_per_task", 8}};
    j["decay"] = {{"tasks", {"reverse_all_of_3", "antonym+product-company"}}, {"k", 2}};
    j["analysis"] = {{"tasks", {"antonym", "english-french"}}, {"ks", {0, 1, 2}}, {"n_samples", 4}};
    return j;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

Pipeline::Pipeline(PipelineConfig config, fs::path out_dir)
    : cfg_(std::move(config)), out_(std::move(out_dir)) {}

const TaskCorpus& Pipeline::corpus() {
    if (!corpus_) corpus_ = TaskCorpus::build(cfg_.corpus);
    return *corpus_;
}

const Model& Pipeline::model() {
    if (!model_) {
        const auto path = out_ / "checkpoint.tvlb";
        check(fs::exists(path), "no checkpoint at " + path.string() + "; run the train stage");
        model_ = Model::load(path);
    }
    return *model_;
}

const Dataset& Pipeline::dataset(const std::string& task) {
    auto it = datasets_.find(task);
    if (it == datasets_.end()) {
        const auto& spec = corpus().spec(task);
        it = datasets_
                 .emplace(task, corpus().generate_dataset(spec, corpus().dataset_size_for(spec), 0))
                 .first;
    }
    return it->second;
}

const SplitResult& Pipeline::split(const std::string& task) {
    auto it = splits_.find(task);
    if (it == splits_.end()) {
        const auto& data = dataset(task);
        const auto dev = std::min<size_t>(static_cast<size_t>(cfg_.corpus.dev_size),
                                          data.size() > 1 ? data.size() - 1 : 0);
        it = splits_.emplace(task, split_dev_eval(data, dev, derive_seed(cfg_.seed, "split", task)))
                 .first;
    }
    return it->second;
}

uint64_t Pipeline::subtree_key(const std::string& stage, std::initializer_list<const char*> keys,
                               std::initializer_list<uint64_t> extra_hashes) {
    uint64_t h = fnv1a64(kToolVersion);
    h = fnv1a64(stage, h);
    const uint64_t seed = cfg_.seed;
    h = fnv1a64_bytes(&seed, sizeof(seed), h);
    for (const char* key : keys) {
        if (cfg_.raw.contains(key)) h = fnv1a64(cfg_.raw.at(key).dump(), h);
        h = fnv1a64("|", h);
    }
    for (uint64_t e : extra_hashes) h = fnv1a64_bytes(&e, sizeof(e), h);
    return h;
}

bool Pipeline::stage_fresh(const std::string& stage, uint64_t key) {
    const auto cache_path = out_ / "cache" / (stage + ".json");
    if (!fs::exists(cache_path)) return false;
    json cache;
    try {
        cache = json::parse(read_text_file(cache_path));
    } catch (...) {
        return false;
    }
    if (cache.value("key", std::string{}) != hash_hex(key)) return false;
    for (const auto& [rel, hash] : cache.at("outputs").items()) {
        const auto path = out_ / rel;
        if (!fs::exists(path)) return false;
        if (hash_hex(hash_file(path)) != hash.get<std::string>()) return false;
    }
    stage_keys_[stage] = key;
    return true;
}

void Pipeline::finish_stage(const std::string& stage, uint64_t key,
                            const std::vector<fs::path>& outputs) {
    json cache;
    cache["key"] = hash_hex(key);
    json outs = json::object();
    for (const auto& rel : outputs) {
        outs[rel.generic_string()] = hash_hex(hash_file(out_ / rel));
    }
    cache["outputs"] = outs;
    write_file_atomic(out_ / "cache" / (stage + ".json"), cache.dump(2) + "\n");
    stage_keys_[stage] = key;
    update_manifest();
}

uint64_t Pipeline::checkpoint_hash() { return hash_file(out_ / "checkpoint.tvlb"); }

void Pipeline::update_manifest() {
    json m;
    m["tool_version"] = kToolVersion;
    m["seed"] = cfg_.seed;
    m["config"] = cfg_.raw;
    if (fs::exists(out_ / "checkpoint.tvlb")) {
        m["checkpoint_hash"] = hash_hex(checkpoint_hash());
    }
    json keys = json::object();
    for (const auto& [stage, key] : stage_keys_) keys[stage] = hash_hex(key);
    m["stage_keys"] = keys;
    m["stage_tasks"] = {{"search", cfg_.search.tasks},
                        {"sweep", cfg_.sweep.tasks},
                        {"locality", cfg_.locality.tasks},
                        {"decay", cfg_.decay.tasks}};
    json sizes = json::object();
    for (const auto& task : cfg_.corpus.tasks) {
        sizes[task] = dataset(task).size();
    }
    m["dataset_sizes"] = sizes;
    write_file_atomic(out_ / "manifest.json", m.dump(2) + "\n");
}

void Pipeline::stage_gen() {
    const uint64_t key = subtree_key("gen", {"corpus"});
    if (stage_fresh("gen", key)) return;
    std::printf("[gen] building vocabulary and datasets\n");
    std::vector<fs::path> outputs;
    write_file_atomic(out_ / "vocab.json", corpus().vocab().to_json());
    outputs.emplace_back("vocab.json");
    for (const auto& task : cfg_.corpus.tasks) {
        const auto rel = fs::path("datasets") / (task + ".jsonl");
        write_file_atomic(out_ / rel, dataset_to_jsonl(task, dataset(task)));
        outputs.push_back(rel);
        // one rendered prompt per task for eyeballing, with its role sidecar
        const auto& data = dataset(task);
        const int k = std::min<int>(3, static_cast<int>(data.size()) - 2);
        auto layout = build_prompt(corpus().vocab(), task, data, k, data[0], false,
                                   derive_seed(cfg_.seed, "sample-prompt", task));
        const auto txt_rel = fs::path("prompts") / (task + ".txt");
        const auto roles_rel = fs::path("prompts") / (task + ".roles.json");
        write_file_atomic(out_ / txt_rel, render_prompt_text(corpus().vocab(), layout));
        write_file_atomic(out_ / roles_rel, layout_roles_json(layout));
        outputs.push_back(txt_rel);
        outputs.push_back(roles_rel);
    }
    finish_stage("gen", key, outputs);
}

void Pipeline::stage_train() {
    stage_gen();
    if (external_checkpoint_) {
        check(fs::exists(out_ / "checkpoint.tvlb"),
              "checkpoint override set but no checkpoint.tvlb present");
        update_manifest();
        return;
    }
    const uint64_t key = subtree_key("train", {"corpus", "model", "train"});
    if (stage_fresh("train", key)) return;
    std::printf("[train] initializing model and running episodes\n");

    ModelConfig mc = cfg_.model;
    mc.vocab_size = static_cast<int>(corpus().vocab().size());
    Model model = init_model(mc, cfg_.seed);
    EpisodeSampler sampler(corpus(), cfg_.episodes, mc.context_len);

    auto gate = [&](const Model& m) {
        double sum = 0.0;
        for (const auto& task : cfg_.gate_tasks) {
            auto r = run_setting(m, corpus(), task, Setting::few(cfg_.gate_k), dataset(task),
                                 split(task).dev, derive_seed(cfg_.seed, "gate", task),
                                 cfg_.workers);
            sum += r.aggregate.accuracy();
        }
        return sum / static_cast<double>(cfg_.gate_tasks.size());
    };

    Csv log;
    log.header = {"step", "loss", "lr", "dev_accuracy"};
    auto result = train(model, sampler, cfg_.train,
                        cfg_.train.eval_every > 0 ? std::function<double(const Model&)>(gate)
                                                  : std::function<double(const Model&)>{},
                        [&](const TrainLogEntry& e) {
                            log.add_row({std::to_string(e.step), csv_num(e.loss), csv_num(e.lr),
                                         e.dev_accuracy < 0 ? std::string{}
                                                            : csv_num(e.dev_accuracy)});
                            std::printf("[train] step %lld loss %.4f%s\n",
                                        static_cast<long long>(e.step), e.loss,
                                        e.dev_accuracy < 0
                                            ? ""
                                            : ("  dev " + fmt_double(e.dev_accuracy)).c_str());
                            std::fflush(stdout);
                        });
    check(!result.diverged, "training diverged (non-finite loss)");
    model.save(out_ / "checkpoint.tvlb");
    write_file_atomic(out_ / "train_log.csv", log.to_string());
    model_ = std::move(model);
    finish_stage("train", key, {"checkpoint.tvlb", "train_log.csv"});
}

void Pipeline::stage_search() {
    stage_train();
    const uint64_t key = subtree_key("search", {"corpus", "search"}, {checkpoint_hash()});
    if (stage_fresh("search", key)) return;
    std::vector<fs::path> outputs;
    const auto layers =
        candidate_layers(model().config.n_layers, cfg_.search.start, cfg_.search.stride);
    Csv summary;
    summary.header = {"task", "role", "k", "best_layer", "best_dev_accuracy"};
    for (const auto& task : cfg_.search.tasks) {
        std::printf("[search] %s\n", task.c_str());
        auto result = layer_search(model(), corpus(), task, TokenRole::COLON_PRE_ANSWER,
                                   cfg_.search.k, dataset(task), split(task).dev, layers,
                                   derive_seed(cfg_.seed, "search", task), cfg_.workers);
        Csv table;
        table.header = {"task", "role", "k", "layer", "dev_accuracy"};
        for (const auto& [layer, acc] : result.table) {
            table.add_row({task, role_name(result.role), std::to_string(result.k),
                           std::to_string(layer), csv_num(acc)});
        }
        const auto table_rel = fs::path("search") / (task + ".table.csv");
        const auto records_rel = fs::path("search") / (task + ".records.jsonl");
        write_file_atomic(out_ / table_rel, table.to_string());
        write_file_atomic(out_ / records_rel, records_to_jsonl(result.records));
        outputs.push_back(table_rel);
        outputs.push_back(records_rel);
        summary.add_row({task, role_name(result.role), std::to_string(result.k),
                         std::to_string(result.best_layer), csv_num(result.best_accuracy)});
    }
    write_file_atomic(out_ / "search" / "summary.csv", summary.to_string());
    outputs.emplace_back(fs::path("search") / "summary.csv");
    finish_stage("search", key, outputs);
}

int Pipeline::best_layer(const std::string& task) {
    auto summary = Csv::parse(read_text_file(out_ / "search" / "summary.csv"));
    for (const auto& row : summary.rows) {
        if (row[summary.column("task")] == task) {
            return std::stoi(row[summary.column("best_layer")]);
        }
    }
    fail("task '" + task + "' is not in search/summary.csv");
}

int Pipeline::mode_best_layer() {
    std::vector<int> layers;
    const auto& tasks = cfg_.analysis.tasks.empty() ? cfg_.search.tasks : cfg_.analysis.tasks;
    for (const auto& task : tasks) layers.push_back(best_layer(task));
    return mode_layer(layers);
}

void Pipeline::stage_sweep() {
    stage_search();
    const uint64_t key = subtree_key("sweep", {"corpus", "sweep", "search"}, {checkpoint_hash()});
    if (stage_fresh("sweep", key)) return;
    std::vector<fs::path> outputs;
    const bool emit_flags =
        std::find(cfg_.sweep.ks.begin(), cfg_.sweep.ks.end(), 32) != cfg_.sweep.ks.end();
    Csv flags;
    flags.header = {"task", "ratio_at_kref", "threshold", "k_ref", "flagged"};
    for (const auto& task : cfg_.sweep.tasks) {
        std::printf("[sweep] %s\n", task.c_str());
        auto result = k_shot_sweep(model(), corpus(), task, cfg_.sweep.ks, best_layer(task),
                                   TokenRole::COLON_PRE_ANSWER, dataset(task), split(task).eval,
                                   derive_seed(cfg_.seed, "sweep", task), cfg_.workers);
        Csv table;
        table.header = {"task", "layer", "role", "k", "zero", "recon", "few", "ratio"};
        for (const auto& cell : result.cells) {
            table.add_row({task, std::to_string(result.layer), role_name(result.role),
                           std::to_string(cell.k), csv_num(cell.zero), csv_num(cell.recon),
                           csv_num(cell.few), csv_num(cell.ratio)});
        }
        const auto table_rel = fs::path("sweep") / (task + ".table.csv");
        const auto records_rel = fs::path("sweep") / (task + ".records.jsonl");
        const auto warn_rel = fs::path("sweep") / (task + ".warnings.txt");
        write_file_atomic(out_ / table_rel, table.to_string());
        write_file_atomic(out_ / records_rel, records_to_jsonl(result.records));
        write_file_atomic(out_ / warn_rel, join(result.warnings, "\n") +
                                               (result.warnings.empty() ? "" : "\n"));
        outputs.push_back(table_rel);
        outputs.push_back(records_rel);
        outputs.push_back(warn_rel);
        if (emit_flags) {
            const bool flagged = flag_hard_to_transfer(result, 0.5, 32);
            double ratio = 0.0;
            for (const auto& cell : result.cells) {
                if (cell.k == 32) ratio = cell.ratio;
            }
            flags.add_row({task, csv_num(ratio), csv_num(0.5), "32", flagged ? "1" : "0"});
        }
    }
    if (emit_flags) {
        write_file_atomic(out_ / "sweep" / "flags.csv", flags.to_string());
        outputs.emplace_back(fs::path("sweep") / "flags.csv");
    }
    finish_stage("sweep", key, outputs);
}

void Pipeline::stage_locality() {
    stage_search();
    const uint64_t key = subtree_key("locality", {"corpus", "locality"}, {checkpoint_hash()});
    if (stage_fresh("locality", key)) return;
    std::vector<fs::path> outputs;
    const auto layers =
        candidate_layers(model().config.n_layers, cfg_.search.start, cfg_.search.stride);
    for (const auto& task : cfg_.locality.tasks) {
        std::printf("[locality] %s\n", task.c_str());
        auto result = token_locality_grid(model(), corpus(), task, cfg_.locality.k, dataset(task),
                                          split(task).dev, split(task).eval, layers,
                                          derive_seed(cfg_.seed, "locality", task), cfg_.workers);
        Csv grid;
        grid.header = {"task", "k", "layer", "role", "example", "dev_accuracy"};
        for (const auto& cell : result.cells) {
            grid.add_row({task, std::to_string(result.k), std::to_string(cell.layer),
                          role_name(cell.role), std::to_string(cell.example),
                          csv_opt(cell.dev_accuracy)});
        }
        Csv roles;
        roles.header = {"task", "k", "role", "best_layer", "dev_accuracy", "eval_accuracy"};
        for (const auto& role : result.roles) {
            roles.add_row({task, std::to_string(result.k), role_name(role.role),
                           std::to_string(role.best_layer), csv_num(role.dev_accuracy),
                           csv_num(role.eval_accuracy)});
        }
        const auto grid_rel = fs::path("locality") / (task + ".grid.csv");
        const auto grid_records_rel = fs::path("locality") / (task + ".grid.records.jsonl");
        const auto roles_rel = fs::path("locality") / (task + ".roles.csv");
        const auto roles_records_rel = fs::path("locality") / (task + ".roles.records.jsonl");
        write_file_atomic(out_ / grid_rel, grid.to_string());
        write_file_atomic(out_ / grid_records_rel, records_to_jsonl(result.grid_records));
        write_file_atomic(out_ / roles_rel, roles.to_string());
        write_file_atomic(out_ / roles_records_rel, records_to_jsonl(result.eval_records));
        outputs.push_back(grid_rel);
        outputs.push_back(grid_records_rel);
        outputs.push_back(roles_rel);
        outputs.push_back(roles_records_rel);
    }
    finish_stage("locality", key, outputs);
}

void Pipeline::stage_probes() {
    stage_train();
    const uint64_t key =
        subtree_key("probes", {"corpus", "probes", "search"}, {checkpoint_hash()});
    if (stage_fresh("probes", key)) return;
    std::vector<fs::path> outputs;
    const auto layers =
        candidate_layers(model().config.n_layers, cfg_.search.start, cfg_.search.stride);

    auto write_grid = [&](const ProbeGrid& grid, const fs::path& rel) {
        Csv csv;
        csv.header = {"k", "layer", "role", "example", "accuracy"};
        for (const auto& cell : grid.cells) {
            csv.add_row({std::to_string(grid.k), std::to_string(cell.layer), role_name(cell.role),
                         std::to_string(cell.example), csv_opt(cell.accuracy)});
        }
        write_file_atomic(out_ / rel, csv.to_string());
        outputs.push_back(rel);
    };

    if (!cfg_.probes.tasks.empty()) {
        std::printf("[probes] decoding grid over %zu tasks\n", cfg_.probes.tasks.size());
        std::vector<LinearProbe> probes;
        auto grid = decode_grid(model(), corpus(), cfg_.probes.tasks, layers, locality_roles(),
                                cfg_.probes.k, cfg_.probes.n_per_task,
                                derive_seed(cfg_.seed, "probes"), cfg_.workers, &probes);
        write_grid(grid, fs::path("probes") / "grid.csv");

        // dump the canonical colon probe in the ACTV container
        stage_search();
        const int mode_l = mode_best_layer();
        for (size_t i = 0; i < grid.cells.size(); ++i) {
            const auto& cell = grid.cells[i];
            if (cell.layer == mode_l && cell.role == TokenRole::COLON_PRE_ANSWER &&
                cell.example == cfg_.probes.k && cell.accuracy) {
                ProbeDataset meta;
                meta.labels = cfg_.probes.tasks;
                meta.layer = cell.layer;
                meta.role = cell.role;
                meta.example_index = cell.example;
                meta.k = cfg_.probes.k;
                save_probe(out_ / "probes" / "colon_probe.actv", probes[i], meta);
                outputs.emplace_back(fs::path("probes") / "colon_probe.actv");
                outputs.emplace_back(fs::path("probes") / "colon_probe.actv.json");
                break;
            }
        }
    }
    if (!cfg_.probes.shared_vocab_tasks.empty()) {
        std::printf("[probes] shared-vocabulary control grid\n");
        auto grid = decode_grid(model(), corpus(), cfg_.probes.shared_vocab_tasks, layers,
                                locality_roles(), cfg_.probes.k, cfg_.probes.n_per_task,
                                derive_seed(cfg_.seed, "probes-shared"), cfg_.workers);
        write_grid(grid, fs::path("probes") / "grid_shared_vocab.csv");
    }
    finish_stage("probes", key, outputs);
}

void Pipeline::stage_decay() {
    stage_search();
    const uint64_t key = subtree_key("decay", {"corpus", "decay", "search"}, {checkpoint_hash()});
    if (stage_fresh("decay", key)) return;
    std::vector<fs::path> outputs;
    for (const auto& task : cfg_.decay.tasks) {
        std::printf("[decay] %s\n", task.c_str());
        const int layer = best_layer(task);
        auto result = per_unit_decay(model(), corpus(), task, cfg_.decay.k, layer, dataset(task),
                                     split(task).eval, derive_seed(cfg_.seed, "decay", task),
                                     cfg_.workers);
        auto zero = run_setting(model(), corpus(), task, Setting::zero(), dataset(task),
                                split(task).eval, derive_seed(cfg_.seed, "decay-zero", task),
                                cfg_.workers);
        auto recon_full = run_setting(model(), corpus(), task,
                                      Setting::recon(cfg_.decay.k, layer), dataset(task),
                                      split(task).eval,
                                      derive_seed(cfg_.seed, "decay-recon-full", task),
                                      cfg_.workers);
        const double few_acc = aggregate_records(result.few_records).accuracy();

        Csv summary;
        summary.header = {"task", "k",    "layer", "defined", "conditioning_size",
                          "zero", "recon", "few"};
        summary.add_row({task, std::to_string(cfg_.decay.k), std::to_string(layer),
                         result.defined ? "1" : "0", std::to_string(result.conditioning_size),
                         csv_num(zero.aggregate.accuracy()),
                         csv_num(recon_full.aggregate.accuracy()), csv_num(few_acc)});
        const auto base = fs::path("decay") / task;
        write_file_atomic(out_ / (base.string() + ".summary.csv"), summary.to_string());
        outputs.emplace_back(base.string() + ".summary.csv");
        if (result.defined) {
            Csv curve;
            curve.header = {"task", "k", "layer", "unit", "accuracy"};
            for (size_t u = 0; u < result.per_unit.size(); ++u) {
                curve.add_row({task, std::to_string(cfg_.decay.k), std::to_string(layer),
                               std::to_string(u + 1), csv_num(result.per_unit[u])});
            }
            write_file_atomic(out_ / (base.string() + ".curve.csv"), curve.to_string());
            outputs.emplace_back(base.string() + ".curve.csv");
        }
        write_file_atomic(out_ / (base.string() + ".few.records.jsonl"),
                          records_to_jsonl(result.few_records));
        write_file_atomic(out_ / (base.string() + ".recon.records.jsonl"),
                          records_to_jsonl(result.recon_records));
        write_file_atomic(out_ / (base.string() + ".zero.records.jsonl"),
                          records_to_jsonl(zero.records));
        write_file_atomic(out_ / (base.string() + ".recon_full.records.jsonl"),
                          records_to_jsonl(recon_full.records));
        outputs.emplace_back(base.string() + ".few.records.jsonl");
        outputs.emplace_back(base.string() + ".recon.records.jsonl");
        outputs.emplace_back(base.string() + ".zero.records.jsonl");
        outputs.emplace_back(base.string() + ".recon_full.records.jsonl");
    }
    finish_stage("decay", key, outputs);
}

void Pipeline::stage_analysis() {
    stage_search();
    const uint64_t key =
        subtree_key("analysis", {"corpus", "analysis", "search"}, {checkpoint_hash()});
    if (stage_fresh("analysis", key)) return;
    std::vector<fs::path> outputs;
    if (cfg_.analysis.tasks.empty()) {
        finish_stage("analysis", key, outputs);
        return;
    }
    const int layer = mode_best_layer();
    std::printf("[analysis] trajectories at mode best layer %d\n", layer);

    Csv traj;
    traj.header = {"task", "layer", "k", "n", "dispersion", "magnitude"};
    std::vector<VectorGroup> groups;
    const auto& vocab = corpus().vocab();
    for (const auto& task : cfg_.analysis.tasks) {
        const auto& demo_pool = dataset(task);
        for (int k : cfg_.analysis.ks) {
            std::vector<TaskVector> vectors(static_cast<size_t>(cfg_.analysis.n_samples));
            parallel_for(vectors.size(), cfg_.workers, [&](size_t i) {
                const uint64_t prompt_seed = derive_seed(
                    cfg_.seed, "analysis", task, static_cast<uint64_t>(k) * 131072 + i);
                auto layout = build_prompt(vocab, task, demo_pool, k,
                                           demo_pool[i % demo_pool.size()], true, prompt_seed);
                vectors[i] = extract_task_vector(model(), layout, layer,
                                                 TokenRole::COLON_PRE_ANSWER, k, prompt_seed);
            });
            traj.add_row({task, std::to_string(layer), std::to_string(k),
                          std::to_string(cfg_.analysis.n_samples), csv_num(dispersion(vectors)),
                          csv_num(mean_magnitude(vectors))});
            VectorGroup group;
            group.task = task;
            group.k = k;
            for (auto& v : vectors) group.vectors.push_back(std::move(v.values));
            groups.push_back(std::move(group));
        }
    }
    write_file_atomic(out_ / "analysis" / "trajectory.csv", traj.to_string());
    outputs.emplace_back(fs::path("analysis") / "trajectory.csv");

    auto projection = centroids_and_projection(groups, 2);
    Csv proj;
    proj.header = {"task", "k", "x", "y"};
    for (const auto& p : projection.points) {
        proj.add_row({p.task, std::to_string(p.k), csv_num(p.x), csv_num(p.y)});
    }
    Csv explained;
    explained.header = {"component", "ratio"};
    for (size_t c = 0; c < projection.explained.size(); ++c) {
        explained.add_row({std::to_string(c + 1), csv_num(projection.explained[c])});
    }
    write_file_atomic(out_ / "analysis" / "projection.csv", proj.to_string());
    write_file_atomic(out_ / "analysis" / "explained.csv", explained.to_string());
    outputs.emplace_back(fs::path("analysis") / "projection.csv");
    outputs.emplace_back(fs::path("analysis") / "explained.csv");

    // the canonical colon task vector for the first analysis task, as an
    // ACTV dump (external interface)
    {
        const auto& task = cfg_.analysis.tasks.front();
        const uint64_t prompt_seed = derive_seed(cfg_.seed, "analysis-dump", task, 0);
        auto layout =
            build_prompt(vocab, task, dataset(task), cfg_.search.k, dataset(task)[0], true,
                         prompt_seed);
        auto tv = extract_task_vector(model(), layout, layer, TokenRole::COLON_PRE_ANSWER,
                                      cfg_.search.k, prompt_seed);
        save_task_vector(out_ / "analysis" / "example_task_vector.actv", tv);
        outputs.emplace_back(fs::path("analysis") / "example_task_vector.actv");
        outputs.emplace_back(fs::path("analysis") / "example_task_vector.actv.json");
    }
    finish_stage("analysis", key, outputs);
}

void Pipeline::stage_report() {
    stage_sweep();
    stage_locality();
    stage_probes();
    stage_decay();
    stage_analysis();
    const uint64_t key =
        subtree_key("report", {"corpus", "sweep", "locality", "probes", "decay", "analysis"},
                    {checkpoint_hash()});
    if (stage_fresh("report", key)) return;
    std::printf("[report] emitting figures\n");
    std::vector<fs::path> outputs;
    const std::string manifest_hash = hash_hex(hash_file(out_ / "manifest.json"));

    auto emit = [&](const fs::path& rel, const std::string& svg) {
        write_file_atomic(out_ / rel, svg);
        outputs.push_back(rel);
    };

    for (const auto& task : cfg_.sweep.tasks) {
        auto sweep = Csv::parse(read_text_file(out_ / "sweep" / (task + ".table.csv")));
        emit(fs::path("figures") / ("sweep_" + task + ".svg"),
             figure_sweep(sweep, task, manifest_hash));
    }
    const bool have_probe_grid = fs::exists(out_ / "probes" / "grid.csv");
    for (const auto& task : cfg_.locality.tasks) {
        auto grid = Csv::parse(read_text_file(out_ / "locality" / (task + ".grid.csv")));
        emit(fs::path("figures") / ("locality_" + task + ".svg"),
             figure_locality(grid, task, manifest_hash));
        if (have_probe_grid) {
            auto roles = Csv::parse(read_text_file(out_ / "locality" / (task + ".roles.csv")));
            auto probe_cells = Csv::parse(read_text_file(out_ / "probes" / "grid.csv"));
            emit(fs::path("figures") / ("roles_" + task + ".svg"),
                 figure_roles(roles, probe_cells, task, manifest_hash));
        }
    }
    if (have_probe_grid) {
        auto grid = Csv::parse(read_text_file(out_ / "probes" / "grid.csv"));
        emit(fs::path("figures") / "probe_grid.svg",
             figure_probe_grid(grid, "task identity decoding accuracy", manifest_hash));
    }
    if (fs::exists(out_ / "probes" / "grid_shared_vocab.csv")) {
        auto grid = Csv::parse(read_text_file(out_ / "probes" / "grid_shared_vocab.csv"));
        emit(fs::path("figures") / "probe_grid_shared_vocab.svg",
             figure_probe_grid(grid, "task identity decoding (shared vocabulary subset)",
                               manifest_hash));
    }
    for (const auto& task : cfg_.decay.tasks) {
        auto summary = Csv::parse(read_text_file(out_ / "decay" / (task + ".summary.csv")));
        Csv curve;
        if (fs::exists(out_ / "decay" / (task + ".curve.csv"))) {
            curve = Csv::parse(read_text_file(out_ / "decay" / (task + ".curve.csv")));
        } else {
            curve.header = {"task", "k", "layer", "unit", "accuracy"};
        }
        emit(fs::path("figures") / ("decay_" + task + ".svg"),
             figure_decay(curve, summary, task, manifest_hash));
    }
    if (fs::exists(out_ / "analysis" / "trajectory.csv")) {
        auto traj = Csv::parse(read_text_file(out_ / "analysis" / "trajectory.csv"));
        emit(fs::path("figures") / "trajectory.svg", figure_trajectory(traj, manifest_hash));
        auto proj = Csv::parse(read_text_file(out_ / "analysis" / "projection.csv"));
        auto explained = Csv::parse(read_text_file(out_ / "analysis" / "explained.csv"));
        emit(fs::path("figures") / "projection.svg",
             figure_projection(proj, explained, manifest_hash));
    }
    finish_stage("report", key, outputs);
}

void Pipeline::run() {
    stage_gen();
    stage_train();
    stage_search();
    stage_sweep();
    stage_locality();
    stage_probes();
    stage_decay();
    stage_analysis();
    stage_report();
}

}  // namespace tvlab
