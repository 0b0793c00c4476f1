#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "tvlab/analysis.hpp"
#include "tvlab/experiments.hpp"
#include "tvlab/probes.hpp"
#include "tvlab/report.hpp"
#include "tvlab/train.hpp"

namespace tvlab {

// Parsed run configuration. One JSON document drives the whole pipeline; see
// default_config_json() and the README for the schema.
struct PipelineConfig {
    uint64_t seed = 0;
    size_t workers = 0;

    TaskCorpus::Config corpus;
    ModelConfig model;  // vocab_size derived later
    TrainConfig train;
    EpisodeConfig episodes;
    std::vector<std::string> gate_tasks;
    int gate_k = 8;

    struct Search {
        std::vector<std::string> tasks;
        int k = 8;
        int start = 0;
        int stride = 1;
    } search;
    struct Sweep {
        std::vector<std::string> tasks;
        std::vector<int> ks = {0, 1, 2, 4, 8, 16, 32};
    } sweep;
    struct Locality {
        std::vector<std::string> tasks;
        int k = 8;
    } locality;
    struct Probes {
        std::vector<std::string> tasks;
        std::vector<std::string> shared_vocab_tasks;
        int k = 8;
        int n_per_task = 100;
    } probes;
    struct Decay {
        std::vector<std::string> tasks;
        int k = 8;
    } decay;
    struct Analysis {
        std::vector<std::string> tasks;
        std::vector<int> ks = {0, 1, 2, 4, 8, 16, 32};
        int n_samples = 24;
    } analysis;

    nlohmann::json raw;

    static PipelineConfig from_json(const nlohmann::json& j);
    static nlohmann::json default_config_json();
    // A scaled-down configuration that exercises every stage in minutes.
    static nlohmann::json smoke_config_json();
};

// Stage runner with content-addressed caching: a stage is skipped when its
// key (config subtree + input hashes + tool version) and recorded output
// hashes still match.
class Pipeline {
public:
    Pipeline(PipelineConfig config, std::filesystem::path out_dir);

    // Treat the checkpoint already in the artifact directory as authoritative
    // (skips the train stage instead of retraining on a cache miss).
    void use_external_checkpoint() { external_checkpoint_ = true; }

    // gen -> train -> search -> sweep -> locality -> probes -> decay ->
    // analysis -> report
    void run();

    void stage_gen();
    void stage_train();
    void stage_search();
    void stage_sweep();
    void stage_locality();
    void stage_probes();
    void stage_decay();
    void stage_analysis();
    void stage_report();

    const TaskCorpus& corpus();
    const Model& model();
    const std::filesystem::path& out_dir() const { return out_; }

    // best layer for a task from the search summary (must have run)
    int best_layer(const std::string& task);
    int mode_best_layer();

private:
    PipelineConfig cfg_;
    std::filesystem::path out_;
    std::optional<TaskCorpus> corpus_;
    std::optional<Model> model_;
    std::map<std::string, Dataset> datasets_;
    std::map<std::string, SplitResult> splits_;

    const Dataset& dataset(const std::string& task);
    const SplitResult& split(const std::string& task);

    uint64_t subtree_key(const std::string& stage, std::initializer_list<const char*> keys,
                         std::initializer_list<uint64_t> extra_hashes = {});
    bool stage_fresh(const std::string& stage, uint64_t key);
    void finish_stage(const std::string& stage, uint64_t key,
                      const std::vector<std::filesystem::path>& outputs);
    void update_manifest();
    uint64_t checkpoint_hash();

    std::map<std::string, uint64_t> stage_keys_;
    bool external_checkpoint_ = false;
};

}  // namespace tvlab
