#pragma once

#include <optional>

#include "tvlab/intervene.hpp"

namespace tvlab {

struct ProbeExample {
    Eigen::VectorXf x;
    int label = 0;
};

// Balanced activation set at one locus: equal counts per task, all vectors
// from the same (layer, role, example).
struct ProbeDataset {
    std::vector<ProbeExample> examples;
    std::vector<std::string> labels;  // task names, label i
    int layer = 0;
    TokenRole role = TokenRole::COLON_PRE_ANSWER;
    int example_index = 0;
    int k = 0;
};

// n_per_task vectors per task from distinct k-shot dummy prompts.
ProbeDataset collect_activations(const Model& model, const TaskCorpus& corpus,
                                 const std::vector<std::string>& tasks, TokenRole role, int layer,
                                 int n_per_task, int k, uint64_t seed, size_t workers = 0,
                                 int example_index = -1);

struct LinearProbe {
    Eigen::MatrixXf weight;  // labels x d
    Eigen::VectorXf bias;
    int epochs = 0;
    int batch = 0;
    double lr = 0.0;
    uint64_t seed = 0;
    double test_accuracy = 0.0;
    size_t train_count = 0;
    size_t test_count = 0;
};

// Multinomial logistic regression by plain mini-batch gradient descent on raw
// activations (no normalization, no regularization). Holdout is stratified by
// task; per-task holdout counts differ by at most one.
LinearProbe train_probe(const ProbeDataset& dataset, int epochs = 20, int batch = 256,
                        double lr = 0.01, double holdout = 0.25, uint64_t seed = 0);

double probe_accuracy(const LinearProbe& probe, const std::vector<ProbeExample>& examples);

struct ProbeGridCell {
    int layer = 0;
    TokenRole role = TokenRole::COLON_PRE_ANSWER;
    int example = 0;
    std::optional<double> accuracy;  // nullopt = locus absent at this k
};

struct ProbeGrid {
    std::vector<std::string> tasks;
    int k = 0;
    std::vector<ProbeGridCell> cells;
    double chance = 0.0;  // 1 / |tasks|
};

// One independently trained probe per (layer, role@example) cell. Activations
// for all cells come from one tapped forward pass per prompt. When probes_out
// is given it receives the trained probe per present cell, aligned with
// grid.cells (absent cells get a default-constructed probe).
ProbeGrid decode_grid(const Model& model, const TaskCorpus& corpus,
                      const std::vector<std::string>& tasks, const std::vector<int>& layers,
                      const std::vector<TokenRole>& roles, int k, int n_per_task, uint64_t seed,
                      size_t workers = 0, std::vector<LinearProbe>* probes_out = nullptr);

// Probe weights dump in the ACTV container (rows concatenated) + JSON metadata.
void save_probe(const std::filesystem::path& path, const LinearProbe& probe,
                const ProbeDataset& dataset);

}  // namespace tvlab
