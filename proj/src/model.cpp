#include "tvlab/model.hpp"

#include <cstring>
#include <set>

#include <nlohmann/json.hpp>

namespace tvlab {

using nlohmann::json;

void ModelConfig::validate() const {
    check(n_layers >= 1, "n_layers must be >= 1");
    check(d_model >= 1 && n_heads >= 1, "d_model and n_heads must be >= 1");
    check(d_model % n_heads == 0, "d_model " + std::to_string(d_model) +
                                      " must be divisible by n_heads " + std::to_string(n_heads));
    check(mlp_ratio >= 1, "mlp_ratio must be >= 1");
    check(context_len >= 2, "context_len must be >= 2");
    check(vocab_size >= 1, "vocab_size must be set from the corpus");
}

net::NetDims ModelConfig::dims() const {
    net::NetDims d;
    d.n_layers = n_layers;
    d.d_model = d_model;
    d.n_heads = n_heads;
    d.mlp_hidden = mlp_ratio * d_model;
    d.context_len = context_len;
    d.vocab_size = vocab_size;
    return d;
}

std::string ModelConfig::to_json() const {
    json j;
    j["n_layers"] = n_layers;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["mlp_ratio"] = mlp_ratio;
    j["context_len"] = context_len;
    j["vocab_size"] = vocab_size;
    j["tap_pre_block"] = tap_pre_block;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.mlp_ratio = j.at("mlp_ratio").get<int>();
    c.context_len = j.at("context_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.tap_pre_block = j.value("tap_pre_block", false);
    return c;
}

int layer_to_internal(const ModelConfig& config, int layer) {
    if (!config.tap_pre_block) return layer;
    // "input to block L" (1-based) is the stream after block L-1; the
    // pre-final-norm locus keeps index n_layers + 1 -> n_layers.
    check(layer >= 1 && layer <= config.n_layers + 1,
          "pre-block layer index must be in [1, n_layers+1]");
    return layer - 1;
}

void InterventionPlan::validate(int d_model) const {
    std::set<std::pair<int, int>> seen;
    for (const auto& e : entries) {
        check(seen.emplace(e.at.layer, e.at.pos).second,
              "intervention plan repeats locus (layer " + std::to_string(e.at.layer) + ", pos " +
                  std::to_string(e.at.pos) + ")");
        check(e.values.size() == d_model, "patch vector dimension " +
                                              std::to_string(e.values.size()) + " != d_model " +
                                              std::to_string(d_model));
    }
}

size_t expected_param_count(const ModelConfig& c) {
    const auto d = static_cast<size_t>(c.d_model);
    const auto v = static_cast<size_t>(c.vocab_size);
    const auto L = static_cast<size_t>(c.n_layers);
    const auto m = static_cast<size_t>(c.mlp_ratio) * d;
    const size_t per_block = 4 * d                  // two layer norms
                             + d * 3 * d + 3 * d    // qkv
                             + d * d + d            // attention out
                             + d * m + m            // fc1
                             + m * d + d;           // fc2
    return v * d + static_cast<size_t>(c.context_len) * d + L * per_block + 2 * d + d * v;
}

Model init_model(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model model;
    model.config = config;
    model.weights.allocate(config.dims());
    Rng rng(derive_seed(seed, "init"));
    const float base_std = 0.02f;
    const float resid_std =
        base_std / std::sqrt(2.0f * static_cast<float>(config.n_layers));
    model.weights.visit([&](const std::string& name, float* p, Eigen::Index r, Eigen::Index c) {
        const auto n = static_cast<size_t>(r * c);
        const bool is_weight = name.find("w_") != std::string::npos || name == "tok_emb" ||
                               name == "pos_emb";
        const bool is_gain = name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "lnf_g";
        if (is_gain) {
            std::fill(p, p + n, 1.0f);
        } else if (is_weight) {
            const bool residual_branch =
                name.find("w_proj") != std::string::npos || name.find("w_fc2") != std::string::npos;
            const float std_dev = residual_branch ? resid_std : base_std;
            for (size_t i = 0; i < n; ++i) p[i] = std_dev * static_cast<float>(rng.normal());
        } else {
            std::fill(p, p + n, 0.0f);
        }
    });
    return model;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "TVLB" magic, u32 version, u32 meta length + meta JSON
// (config, step, rng state), u32 tensor count, then per tensor: u16 name
// length, name bytes, u32 rows, u32 cols, rows*cols little-endian f32.
// ---------------------------------------------------------------------------

namespace {

constexpr uint32_t kCheckpointVersion = 1;

void put_u16(std::vector<unsigned char>& out, uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u32(std::vector<unsigned char>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const unsigned char* p;
    size_t n;
    size_t off = 0;

    void need(size_t k) const {
        check(off + k <= n, "checkpoint file truncated");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[off] | (p[off + 1] << 8));
        off += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[off + static_cast<size_t>(i)]) << (8 * i);
        off += 4;
        return v;
    }
    std::string bytes(size_t k) {
        need(k);
        std::string s(reinterpret_cast<const char*>(p + off), k);
        off += k;
        return s;
    }
};

}  // namespace

std::vector<unsigned char> Model::serialize() const {
    static_assert(sizeof(float) == 4);
    std::vector<unsigned char> out;
    out.insert(out.end(), {'T', 'V', 'L', 'B'});
    put_u32(out, kCheckpointVersion);
    json meta;
    meta["config"] = json::parse(config.to_json());
    meta["step"] = step;
    meta["rng_state"] = rng_state;
    const std::string meta_text = meta.dump();
    put_u32(out, static_cast<uint32_t>(meta_text.size()));
    out.insert(out.end(), meta_text.begin(), meta_text.end());

    uint32_t count = 0;
    weights.visit([&](const std::string&, const float*, Eigen::Index, Eigen::Index) { ++count; });
    put_u32(out, count);
    weights.visit([&](const std::string& name, const float* p, Eigen::Index r, Eigen::Index c) {
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<uint32_t>(r));
        put_u32(out, static_cast<uint32_t>(c));
        const size_t bytes = static_cast<size_t>(r * c) * 4;
        const size_t at = out.size();
        out.resize(at + bytes);
        std::memcpy(out.data() + at, p, bytes);  // little-endian host
    });
    return out;
}

uint64_t Model::content_hash() const {
    auto bytes = serialize();
    return fnv1a64_bytes(bytes.data(), bytes.size());
}

void Model::save(const std::filesystem::path& path) const {
    auto bytes = serialize();
    write_file_atomic(path, bytes.data(), bytes.size());
}

Model Model::load(const std::filesystem::path& path) {
    auto bytes = read_binary_file(path);
    Reader r{bytes.data(), bytes.size()};
    check(r.bytes(4) == "TVLB", "not a TVLB checkpoint: " + path.string());
    const uint32_t version = r.u32();
    check(version == kCheckpointVersion,
          "unsupported checkpoint version " + std::to_string(version));
    const uint32_t meta_len = r.u32();
    json meta = json::parse(r.bytes(meta_len));
    Model model;
    model.config = ModelConfig::from_json(meta.at("config").dump());
    model.config.validate();
    model.step = meta.at("step").get<int64_t>();
    model.rng_state = meta.at("rng_state").get<std::string>();
    model.weights.allocate(model.config.dims());

    const uint32_t count = r.u32();
    uint32_t expected = 0;
    model.weights.visit([&](const std::string&, float*, Eigen::Index, Eigen::Index) { ++expected; });
    check(count == expected, "checkpoint tensor count mismatch");
    model.weights.visit([&](const std::string& name, float* p, Eigen::Index rows, Eigen::Index cols) {
        const uint16_t name_len = r.u16();
        const std::string got = r.bytes(name_len);
        check(got == name, "checkpoint tensor order mismatch: expected '" + name + "', got '" +
                               got + "'");
        const uint32_t fr = r.u32();
        const uint32_t fc = r.u32();
        check(fr == static_cast<uint32_t>(rows) && fc == static_cast<uint32_t>(cols),
              "checkpoint tensor '" + name + "' has shape " + std::to_string(fr) + "x" +
                  std::to_string(fc) + ", expected " + std::to_string(rows) + "x" +
                  std::to_string(cols));
        const size_t nbytes = static_cast<size_t>(rows * cols) * 4;
        r.need(nbytes);
        std::memcpy(p, r.p + r.off, nbytes);
        r.off += nbytes;
    });
    check(r.off == r.n, "trailing bytes in checkpoint file");
    return model;
}

ForwardResult forward(const Model& model, const std::vector<TokenId>& tokens,
                      const std::vector<TapPoint>& taps, const InterventionPlan& patches,
                      bool full_logits, KvCache<float>* kv_out) {
    patches.validate(model.config.d_model);
    std::vector<net::Patch<float>> ps;
    ps.reserve(patches.entries.size());
    for (const auto& e : patches.entries) {
        ps.push_back({e.at, e.values, e.mode});
    }
    auto out = net::forward(model.weights, tokens, ps, taps, full_logits, kv_out);
    ForwardResult res;
    res.logits = std::move(out.logits);
    res.last_logits = out.last_logits.transpose();
    res.tapped = std::move(out.tapped);
    return res;
}

namespace {

TokenId argmax_token(const Eigen::VectorXf& logits) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);  // first maximal index on ties
    return static_cast<TokenId>(best);
}

}  // namespace

std::vector<TokenId> generate_greedy(const Model& model, const std::vector<TokenId>& prompt,
                                     const InterventionPlan& patches, int max_new) {
    KvCache<float> cache;
    auto first = forward(model, prompt, {}, patches, false, &cache);
    std::vector<TokenId> out;
    Eigen::VectorXf logits = first.last_logits;
    for (int i = 0; i < max_new; ++i) {
        const TokenId tok = argmax_token(logits);
        out.push_back(tok);
        if (tok == TOK_NEWLINE || i + 1 >= max_new) break;
        if (cache.len >= model.config.context_len) break;
        logits = net::decode_step(model.weights, cache, tok).transpose();
    }
    return out;
}

}  // namespace tvlab
