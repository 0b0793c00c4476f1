#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tvlab/vocab.hpp"

namespace tvlab {

// Fixed bijection between two disjoint word sets. Stands in for the lexical
// knowledge behind the word-to-word tasks (antonym, country-capital, ...).
struct MappingTable {
    std::string name;
    std::vector<std::pair<TokenId, TokenId>> pairs;  // source -> target

    TokenId apply(TokenId source) const;
    const std::vector<TokenId>& sources() const { return sources_; }

    // Validates bijectivity and source/target disjointness.
    static MappingTable make(std::string name, std::vector<std::pair<TokenId, TokenId>> pairs);

    // Random bijection source_slice[i] -> shuffled target_slice[i].
    static MappingTable sample(std::string name, const std::vector<TokenId>& source_slice,
                               const std::vector<TokenId>& target_slice, uint64_t seed);

private:
    std::vector<TokenId> sources_;
    std::map<TokenId, TokenId> lookup_;
};

enum class TaskFamily {
    mapping,
    choose_position,
    count_category,
    position_of_category,
    word_length,
    repeat_x3,
    all_but_category,
    choose_multi,
    reverse_list,
    shift_list,
    mixed_chain,
};

const char* family_name(TaskFamily family);

// Generative definition of one task. Which params apply depends on the family.
struct TaskSpec {
    std::string name;
    TaskFamily family = TaskFamily::mapping;

    std::string mapping;            // mapping, repeat_x3
    int list_len = 0;               // list / category families
    std::vector<int> positions;     // choose_position (one), choose_multi (several)
    std::string target_category;    // count / position_of / all_but: the category acted on
    int drop_count = 0;             // all_but: how many target-category words the query holds
    std::string keep_category;      // all_but: category of the kept words ("" = any non-target)
    std::vector<TaskSpec> sub;      // mixed_chain

    int answer_units = 1;

    void validate() const;  // invariants: answer_units >= 1, chain arity, ...
};

struct QAPair {
    std::vector<std::string> query;
    std::vector<std::string> answer;
};

using Dataset = std::vector<QAPair>;

// The task suite plus everything needed to answer queries: vocabulary and the
// fixed mapping tables.
class TaskCorpus {
public:
    struct Config {
        uint64_t seed = 0;
        VocabSizes vocab;
        int mapping_pairs = 96;        // source-slice size per mapping table
        int dataset_size = 512;        // default dataset size
        int dev_size = 50;
        std::vector<std::string> tasks;  // empty = full built-in suite
        std::map<std::string, int> dataset_size_overrides;
    };

    static TaskCorpus build(const Config& config);

    const Vocabulary& vocab() const { return vocab_; }
    const std::vector<TaskSpec>& specs() const { return specs_; }
    const TaskSpec& spec(const std::string& name) const;
    bool has_task(const std::string& name) const;
    const MappingTable& mapping(const std::string& name) const;

    // Applies the task's answer function.
    std::vector<std::string> answer(const TaskSpec& spec, const std::vector<std::string>& query) const;

    // Largest number of distinct queries the task admits.
    uint64_t max_distinct_queries(const TaskSpec& spec) const;

    Dataset generate_dataset(const TaskSpec& spec, size_t size, uint64_t seed) const;
    // Dataset size for a task under this corpus configuration.
    size_t dataset_size_for(const TaskSpec& spec) const;

    // Fresh bijection over the same slices as `mapping`, for episodes whose
    // lookup content must be inferable only from the context.
    MappingTable sample_fresh_mapping(const std::string& mapping, uint64_t seed) const;

    // Task names for the canonical groups.
    static std::vector<std::string> simple_tasks();
    static std::vector<std::string> longer_tasks();
    static std::vector<std::string> mixed_tasks();
    static std::vector<std::string> shared_vocab_list_tasks();  // the 9 list operations

    const Config& config() const { return config_; }

private:
    Config config_;
    Vocabulary vocab_;
    std::vector<TaskSpec> specs_;
    std::map<std::string, size_t> spec_index_;
    std::map<std::string, MappingTable> mappings_;
    std::map<std::string, std::pair<std::vector<TokenId>, std::vector<TokenId>>> mapping_slices_;

    std::vector<std::string> list_pool_;  // all content words, for list tasks

    void add_spec(TaskSpec spec);
    std::vector<std::string> category_words(const std::string& name) const;
    std::vector<std::string> pool_excluding(const std::string& target_category) const;
    QAPair sample_query(const TaskSpec& spec, Rng& rng) const;
};

struct SplitResult {
    Dataset dev;
    Dataset eval;
};

// Disjoint dev/eval split, order-stable per seed. The eval side is the
// held-out remainder.
SplitResult split_dev_eval(const Dataset& dataset, size_t dev_size, uint64_t seed);

// Single-unit mapping tasks chained positionally: query word i is answered by
// sub-spec i.
TaskSpec compose_mixed_task(const std::string& name, const std::vector<TaskSpec>& sub_specs);

// JSONL: one {"task":..,"query":[..],"answer":[..]} object per line.
std::string dataset_to_jsonl(const std::string& task, const Dataset& dataset);
Dataset dataset_from_jsonl(const std::string& text);

}  // namespace tvlab
