#pragma once

#include <optional>

#include "tvlab/intervene.hpp"

namespace tvlab {

// Arithmetic progression start, start+stride, ... up to and including the
// pre-final-norm index n_layers.
std::vector<int> candidate_layers(int n_layers, int start = 0, int stride = 1);

// Argmax with ties broken toward the lowest layer.
int argmax_layer(const std::vector<std::pair<int, double>>& table);

struct LayerSearchResult {
    std::string task;
    TokenRole role = TokenRole::COLON_PRE_ANSWER;
    int k = 0;
    int best_layer = 0;
    double best_accuracy = 0.0;
    std::vector<std::pair<int, double>> table;  // layer -> dev recon accuracy
    std::vector<EvalRecord> records;
};

// Recontextualized dev accuracy per candidate layer; vectors for all layers
// come from one tapped forward pass per dev query.
LayerSearchResult layer_search(const Model& model, const TaskCorpus& corpus,
                               const std::string& task, TokenRole role, int k,
                               const Dataset& demo_pool, const Dataset& dev_set,
                               const std::vector<int>& layers, uint64_t seed, size_t workers = 0);

struct SweepCell {
    int k = 0;
    double zero = 0.0;
    double recon = 0.0;
    double few = 0.0;
    double ratio = 0.0;  // recon/few, 0 when few == 0
};

struct SweepResult {
    std::string task;
    int layer = 0;
    TokenRole role = TokenRole::COLON_PRE_ANSWER;
    std::vector<SweepCell> cells;
    std::vector<EvalRecord> records;
    std::vector<std::string> warnings;
};

// {zero, recon, few} accuracies per k at a fixed layer (the best layer from
// the 8-shot search). k=0 recon extracts from a 0-shot dummy prompt.
SweepResult k_shot_sweep(const Model& model, const TaskCorpus& corpus, const std::string& task,
                         const std::vector<int>& ks, int layer, TokenRole role,
                         const Dataset& demo_pool, const Dataset& eval_set, uint64_t seed,
                         size_t workers = 0);

// Format-token roles eligible for extraction loci.
const std::vector<TokenRole>& locality_roles();

struct LocalityCell {
    TokenRole role;
    int example = 0;
    int layer = 0;
    std::optional<double> dev_accuracy;  // nullopt = locus absent, an explicit null
};

struct RoleSummary {
    TokenRole role;
    int best_layer = 0;
    double dev_accuracy = 0.0;   // at best layer, test-example locus
    double eval_accuracy = 0.0;  // eval set, test-example locus at best layer
};

struct LocalityResult {
    std::string task;
    int k = 0;
    std::vector<int> layers;
    std::vector<LocalityCell> cells;  // layer-major over (role, example) columns
    std::vector<RoleSummary> roles;
    std::vector<EvalRecord> grid_records;  // dev records behind the cells
    std::vector<EvalRecord> eval_records;
};

// Dev-set recon accuracy for every (layer, role@example) locus, then a
// per-role layer search (re-using the dev split) and an eval-set pass at each
// role's best layer.
LocalityResult token_locality_grid(const Model& model, const TaskCorpus& corpus,
                                   const std::string& task, int k, const Dataset& demo_pool,
                                   const Dataset& dev_set, const Dataset& eval_set,
                                   const std::vector<int>& layers, uint64_t seed,
                                   size_t workers = 0);

// ratio(k_ref) < threshold. Errors when the sweep lacks k_ref.
bool flag_hard_to_transfer(const SweepResult& sweep, double threshold = 0.5, int k_ref = 32);

struct DecayResult {
    std::string task;
    int k = 0;
    int layer = 0;
    bool defined = false;          // false when the conditioning set is empty
    size_t conditioning_size = 0;  // queries fully correct at k-shot
    std::vector<double> per_unit;  // recon accuracy for units 1..n
    std::vector<EvalRecord> few_records;
    std::vector<EvalRecord> recon_records;
};

// Per-unit recon accuracy over the queries the model answers fully correctly
// in the k-shot setting.
DecayResult per_unit_decay(const Model& model, const TaskCorpus& corpus, const std::string& task,
                           int k, int layer, const Dataset& demo_pool, const Dataset& eval_set,
                           uint64_t seed, size_t workers = 0);

// Most frequent best layer; ties toward the lower layer.
int mode_layer(const std::vector<int>& best_layers);

}  // namespace tvlab
