#pragma once

#include <filesystem>

#include "tvlab/model.hpp"
#include "tvlab/prompt.hpp"
#include "tvlab/tasks.hpp"

namespace tvlab {

struct TaskVectorProvenance {
    std::string task;
    int k = 0;
    int layer = 0;
    TokenRole role = TokenRole::COLON_PRE_ANSWER;
    int example_index = 0;
    uint64_t prompt_seed = 0;
};

// One residual-stream vector with where-it-came-from provenance.
struct TaskVector {
    Eigen::VectorXf values;
    TaskVectorProvenance prov;
};

// Residual activation at (layer, role@example) from an unpatched forward pass.
TaskVector extract_task_vector(const Model& model, const PromptLayout& layout, int layer,
                               TokenRole role, int example_index, uint64_t prompt_seed = 0);

// Same forward pass, many loci: one vector per (layer, role instance).
std::vector<TaskVector> extract_task_vectors(const Model& model, const PromptLayout& layout,
                                             const std::vector<int>& layers,
                                             const std::vector<std::pair<TokenRole, int>>& loci,
                                             uint64_t prompt_seed = 0);

struct EvalRecord {
    std::string task;
    std::string setting;  // "zero" | "few" | "recon"
    int k = 0;
    int layer = -1;          // recon only
    std::string role;        // recon only
    int example = -1;        // recon only: extraction example index
    std::string mode;        // recon only: "overwrite" | "add"
    std::vector<std::string> query;
    std::vector<std::string> gold;
    std::vector<std::string> generated;
    std::vector<uint8_t> unit_correct;
    double mean = 0.0;
    uint64_t prompt_seed = 0;

    std::string to_json() const;
    static EvalRecord from_json(const std::string& text);
};

// Pooled per-unit accuracy: total correct units over total gold units.
struct Aggregate {
    int64_t correct_units = 0;
    int64_t total_units = 0;
    double accuracy() const {
        return total_units == 0 ? 0.0 : static_cast<double>(correct_units) / static_cast<double>(total_units);
    }
};
Aggregate aggregate_records(const std::vector<EvalRecord>& records);

// Applies the vector at (vector.layer, same-role position) of a zero-shot
// prompt, greedily decodes up to max_units*2+1 tokens, and grades against the
// prompt's gold answer.
EvalRecord recontextualize(const Model& model, const Vocabulary& vocab,
                           const PromptLayout& zero_layout, const TaskVector& vector,
                           PatchMode mode, int max_units);

struct Setting {
    enum class Type { zero, few, recon };
    Type type = Type::zero;
    int k = 0;                                     // few, recon
    int layer = 0;                                 // recon
    TokenRole role = TokenRole::COLON_PRE_ANSWER;  // recon
    int example_index = -1;                        // recon extraction locus; -1 = test example
    PatchMode mode = PatchMode::overwrite;         // recon

    static Setting zero();
    static Setting few(int k);
    static Setting recon(int k, int layer, TokenRole role = TokenRole::COLON_PRE_ANSWER,
                         PatchMode mode = PatchMode::overwrite);
};

struct RunResult {
    std::vector<EvalRecord> records;
    Aggregate aggregate;
};

// One EvalRecord per eval query. Demonstrations (and, for recon, the dummy
// stand-in) are drawn from demo_pool; recon extracts one task vector per eval
// query from its own dummy-query source prompt.
RunResult run_setting(const Model& model, const TaskCorpus& corpus, const std::string& task,
                      const Setting& setting, const Dataset& demo_pool, const Dataset& eval_set,
                      uint64_t seed, size_t workers = 0);

// ACTV dump: magic, u32 version, u32 d_model, little-endian f32 values;
// provenance goes to <path>.json.
void save_task_vector(const std::filesystem::path& path, const TaskVector& vector);
TaskVector load_task_vector(const std::filesystem::path& path);

std::string records_to_jsonl(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> records_from_jsonl(const std::string& text);

}  // namespace tvlab
