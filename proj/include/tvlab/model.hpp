#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tvlab/net.hpp"

namespace tvlab {

using net::KvCache;
using net::PatchMode;
using net::TapPoint;

struct ModelConfig {
    int n_layers = 8;
    int d_model = 256;
    int n_heads = 4;
    int mlp_ratio = 4;
    int context_len = 640;
    int vocab_size = 0;  // derived from the corpus vocabulary
    // When true, user-facing tap/patch layer index L means "input to block L"
    // instead of "output of block L". Both address the same lattice.
    bool tap_pre_block = false;

    void validate() const;
    net::NetDims dims() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// User-facing layer index -> internal lattice index (0..n_layers).
int layer_to_internal(const ModelConfig& config, int layer);

struct PatchEntry {
    TapPoint at;
    Eigen::VectorXf values;
    PatchMode mode = PatchMode::overwrite;
};

// A set of patches for one forward pass; at most one entry per locus.
struct InterventionPlan {
    std::vector<PatchEntry> entries;
    void validate(int d_model) const;
};

struct Model {
    ModelConfig config;
    net::Weights<float> weights;
    int64_t step = 0;
    std::string rng_state;  // serialized training rng, "" before training

    std::vector<unsigned char> serialize() const;
    uint64_t content_hash() const;
    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);
};

// Deterministic init: normal(0, 0.02) weights with the residual-branch
// projections (attention out, MLP out) downscaled by 1/sqrt(2*n_layers);
// zero biases, unit LayerNorm gains.
Model init_model(const ModelConfig& config, uint64_t seed);

struct ForwardResult {
    Eigen::MatrixXf logits;  // T x V when full_logits was requested
    Eigen::VectorXf last_logits;
    std::vector<Eigen::VectorXf> tapped;  // aligned with taps
};

// One forward pass with interventions. Tapped vectors are post-patch values.
ForwardResult forward(const Model& model, const std::vector<TokenId>& tokens,
                      const std::vector<TapPoint>& taps = {},
                      const InterventionPlan& patches = {}, bool full_logits = false,
                      KvCache<float>* kv_out = nullptr);

// Greedy generation. Patches apply to prompt positions during prefill; the
// cached keys/values downstream of a patched locus reflect the patched value,
// and generated positions are never patched. Stops after `max_new` tokens or
// once a newline token is produced (the newline is kept in the output).
std::vector<TokenId> generate_greedy(const Model& model, const std::vector<TokenId>& prompt,
                                     const InterventionPlan& patches, int max_new);

// Closed-form parameter count for this architecture.
size_t expected_param_count(const ModelConfig& config);

}  // namespace tvlab
