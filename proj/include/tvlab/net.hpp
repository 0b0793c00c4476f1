#pragma once

// Decoder-only transformer core, templated on the scalar type so the gradient
// tests can run the identical code in double precision. Pre-norm blocks,
// learned absolute positions, GELU MLP, untied unembedding.
//
// Residual-stream lattice: "layer" 0 is the embedding output (the input to
// block 1); layer b (1-based) is the stream after block b; layer n_layers is
// the pre-final-norm stream. Patches overwrite/add at a (layer, position)
// locus before anything downstream consumes it; taps read post-patch values.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tvlab/common.hpp"
#include "tvlab/vocab.hpp"

namespace tvlab::net {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowX = Eigen::Matrix<S, 1, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kLnEps = 1e-5;

struct NetDims {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int mlp_hidden = 0;
    int context_len = 0;
    int vocab_size = 0;

    int head_dim() const { return d_model / n_heads; }
};

template <typename S>
struct BlockWeights {
    VecX<S> ln1_g, ln1_b, ln2_g, ln2_b;
    MatX<S> w_qkv;   // d x 3d
    VecX<S> b_qkv;   // 3d
    MatX<S> w_proj;  // d x d
    VecX<S> b_proj;  // d
    MatX<S> w_fc1;   // d x mlp
    VecX<S> b_fc1;   // mlp
    MatX<S> w_fc2;   // mlp x d
    VecX<S> b_fc2;   // d
};

template <typename S>
struct Weights {
    NetDims dims;
    MatX<S> tok_emb;  // V x d
    MatX<S> pos_emb;  // C x d
    std::vector<BlockWeights<S>> blocks;
    VecX<S> lnf_g, lnf_b;
    MatX<S> w_unembed;  // d x V

    void allocate(const NetDims& nd) {
        dims = nd;
        const int d = nd.d_model, m = nd.mlp_hidden;
        tok_emb.setZero(nd.vocab_size, d);
        pos_emb.setZero(nd.context_len, d);
        blocks.resize(static_cast<size_t>(nd.n_layers));
        for (auto& b : blocks) {
            b.ln1_g.setZero(d);
            b.ln1_b.setZero(d);
            b.ln2_g.setZero(d);
            b.ln2_b.setZero(d);
            b.w_qkv.setZero(d, 3 * d);
            b.b_qkv.setZero(3 * d);
            b.w_proj.setZero(d, d);
            b.b_proj.setZero(d);
            b.w_fc1.setZero(d, m);
            b.b_fc1.setZero(m);
            b.w_fc2.setZero(m, d);
            b.b_fc2.setZero(d);
        }
        lnf_g.setZero(d);
        lnf_b.setZero(d);
        w_unembed.setZero(d, nd.vocab_size);
    }

    // Visits every tensor in a fixed order; fn(name, data, rows, cols).
    // Vectors report cols == 1.
    template <typename F>
    void visit(F&& fn) {
        fn("tok_emb", tok_emb.data(), tok_emb.rows(), tok_emb.cols());
        fn("pos_emb", pos_emb.data(), pos_emb.rows(), pos_emb.cols());
        for (size_t i = 0; i < blocks.size(); ++i) {
            auto& b = blocks[i];
            const std::string p = "block" + std::to_string(i) + ".";
            fn(p + "ln1_g", b.ln1_g.data(), b.ln1_g.size(), 1);
            fn(p + "ln1_b", b.ln1_b.data(), b.ln1_b.size(), 1);
            fn(p + "w_qkv", b.w_qkv.data(), b.w_qkv.rows(), b.w_qkv.cols());
            fn(p + "b_qkv", b.b_qkv.data(), b.b_qkv.size(), 1);
            fn(p + "w_proj", b.w_proj.data(), b.w_proj.rows(), b.w_proj.cols());
            fn(p + "b_proj", b.b_proj.data(), b.b_proj.size(), 1);
            fn(p + "ln2_g", b.ln2_g.data(), b.ln2_g.size(), 1);
            fn(p + "ln2_b", b.ln2_b.data(), b.ln2_b.size(), 1);
            fn(p + "w_fc1", b.w_fc1.data(), b.w_fc1.rows(), b.w_fc1.cols());
            fn(p + "b_fc1", b.b_fc1.data(), b.b_fc1.size(), 1);
            fn(p + "w_fc2", b.w_fc2.data(), b.w_fc2.rows(), b.w_fc2.cols());
            fn(p + "b_fc2", b.b_fc2.data(), b.b_fc2.size(), 1);
        }
        fn("lnf_g", lnf_g.data(), lnf_g.size(), 1);
        fn("lnf_b", lnf_b.data(), lnf_b.size(), 1);
        fn("w_unembed", w_unembed.data(), w_unembed.rows(), w_unembed.cols());
    }

    template <typename F>
    void visit(F&& fn) const {
        const_cast<Weights<S>*>(this)->visit(
            [&](const std::string& name, S* data, Eigen::Index r, Eigen::Index c) {
                fn(name, static_cast<const S*>(data), r, c);
            });
    }

    size_t num_params() const {
        size_t n = 0;
        visit([&](const std::string&, const S*, Eigen::Index r, Eigen::Index c) {
            n += static_cast<size_t>(r * c);
        });
        return n;
    }

    void set_zero() {
        visit([](const std::string&, S* p, Eigen::Index r, Eigen::Index c) {
            std::fill(p, p + r * c, S(0));
        });
    }

    template <typename S2>
    void cast_from(const Weights<S2>& other) {
        allocate(other.dims);
        std::vector<S*> mine;
        visit([&](const std::string&, S* p, Eigen::Index, Eigen::Index) { mine.push_back(p); });
        size_t i = 0;
        other.visit([&](const std::string&, const S2* p, Eigen::Index r, Eigen::Index c) {
            S* dst = mine[i++];
            for (Eigen::Index j = 0; j < r * c; ++j) dst[j] = static_cast<S>(p[j]);
        });
    }
};

struct TapPoint {
    int layer = 0;  // 0..n_layers, see lattice note above
    int pos = 0;
};

enum class PatchMode { overwrite, add };

template <typename S>
struct Patch {
    TapPoint at;
    VecX<S> values;
    PatchMode mode = PatchMode::overwrite;
};

// ---------------------------------------------------------------------------
// Elementwise kernels
// ---------------------------------------------------------------------------

template <typename S>
inline void layer_norm_rows(const MatX<S>& x, const VecX<S>& g, const VecX<S>& b, MatX<S>& out,
                            VecX<S>* mean_out = nullptr, VecX<S>* rstd_out = nullptr) {
    const Eigen::Index T = x.rows(), d = x.cols();
    out.resize(T, d);
    if (mean_out) mean_out->resize(T);
    if (rstd_out) rstd_out->resize(T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const S mu = x.row(t).mean();
        const S var = (x.row(t).array() - mu).square().sum() / static_cast<S>(d);
        const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
        out.row(t) = (((x.row(t).array() - mu) * rstd) * g.transpose().array() +
                      b.transpose().array());
        if (mean_out) (*mean_out)(t) = mu;
        if (rstd_out) (*rstd_out)(t) = rstd;
    }
}

template <typename S>
inline RowX<S> layer_norm_row(const RowX<S>& x, const VecX<S>& g, const VecX<S>& b) {
    const Eigen::Index d = x.cols();
    const S mu = x.mean();
    const S var = (x.array() - mu).square().sum() / static_cast<S>(d);
    const S rstd = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
    return (((x.array() - mu) * rstd) * g.transpose().array() + b.transpose().array()).matrix();
}

// d(LN)/dx given cached mean/rstd. Accumulates dg/db.
template <typename S>
inline void layer_norm_backward(const MatX<S>& x, const VecX<S>& mean, const VecX<S>& rstd,
                                const VecX<S>& g, const MatX<S>& dy, MatX<S>& dx, VecX<S>& dg,
                                VecX<S>& db) {
    const Eigen::Index T = x.rows(), d = x.cols();
    dx.resize(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        const auto xhat = ((x.row(t).array() - mean(t)) * rstd(t)).eval();
        const auto dyg = (dy.row(t).array() * g.transpose().array()).eval();
        const S m1 = dyg.mean();
        const S m2 = (dyg * xhat).mean();
        dx.row(t) = (rstd(t) * (dyg - m1 - xhat * m2)).matrix();
        dg.array() += (dy.row(t).array() * xhat).transpose();
        db.array() += dy.row(t).array().transpose();
    }
}

template <typename S>
inline S gelu_one(S x) {
    const S c1 = static_cast<S>(0.7978845608028654);
    const S c2 = static_cast<S>(0.044715);
    return S(0.5) * x * (S(1) + std::tanh(c1 * (x + c2 * x * x * x)));
}

template <typename S>
inline S gelu_grad_one(S x) {
    const S c1 = static_cast<S>(0.7978845608028654);
    const S c2 = static_cast<S>(0.044715);
    const S t = std::tanh(c1 * (x + c2 * x * x * x));
    return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * c1 * (S(1) + S(3) * c2 * x * x);
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename S>
struct KvCache {
    int len = 0;
    std::vector<MatX<S>> k;  // per block, context_len x d
    std::vector<MatX<S>> v;

    void allocate(const NetDims& dims) {
        len = 0;
        k.assign(static_cast<size_t>(dims.n_layers), MatX<S>(dims.context_len, dims.d_model));
        v.assign(static_cast<size_t>(dims.n_layers), MatX<S>(dims.context_len, dims.d_model));
    }
};

template <typename S>
struct ForwardOut {
    MatX<S> logits;              // T x V, only when full_logits requested
    RowX<S> last_logits;         // logits at the final position
    std::vector<VecX<S>> tapped;  // aligned with the requested taps
};

template <typename S>
inline void attention_full(const NetDims& dims, const MatX<S>& qkv, MatX<S>& att_cat,
                           std::vector<MatX<S>>* probs_out) {
    const Eigen::Index T = qkv.rows();
    const int d = dims.d_model, H = dims.n_heads, hs = dims.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(hs));
    att_cat.resize(T, d);
    if (probs_out) probs_out->resize(static_cast<size_t>(H));
    MatX<S> scores;
    for (int h = 0; h < H; ++h) {
        auto q = qkv.block(0, h * hs, T, hs);
        auto k = qkv.block(0, d + h * hs, T, hs);
        auto v = qkv.block(0, 2 * d + h * hs, T, hs);
        scores.noalias() = q * k.transpose();
        scores *= scale;
        // causal softmax; masked entries end up exactly zero
        for (Eigen::Index i = 0; i < T; ++i) {
            S mx = scores(i, 0);
            for (Eigen::Index j = 1; j <= i; ++j) mx = std::max(mx, scores(i, j));
            S sum = S(0);
            for (Eigen::Index j = 0; j <= i; ++j) {
                const S e = std::exp(scores(i, j) - mx);
                scores(i, j) = e;
                sum += e;
            }
            const S inv = S(1) / sum;
            for (Eigen::Index j = 0; j <= i; ++j) scores(i, j) *= inv;
            for (Eigen::Index j = i + 1; j < T; ++j) scores(i, j) = S(0);
        }
        att_cat.block(0, h * hs, T, hs).noalias() = scores * v;
        if (probs_out) (*probs_out)[static_cast<size_t>(h)] = scores;
    }
}

// Residual stream after every block, with patches applied and K/V optionally
// recorded. Returns the stream matrices indexed by layer (0..n_layers).
template <typename S>
inline std::vector<MatX<S>> run_stream(const Weights<S>& w, const std::vector<TokenId>& tokens,
                                       const std::vector<Patch<S>>& patches,
                                       KvCache<S>* kv_out) {
    const NetDims& dims = w.dims;
    const auto T = static_cast<Eigen::Index>(tokens.size());
    check(T > 0, "forward: empty token sequence");
    check(T <= dims.context_len, "forward: sequence of " + std::to_string(T) +
                                     " tokens exceeds context_len " +
                                     std::to_string(dims.context_len));
    for (const auto& p : patches) {
        check(p.at.layer >= 0 && p.at.layer <= dims.n_layers,
              "patch layer " + std::to_string(p.at.layer) + " out of range [0, " +
                  std::to_string(dims.n_layers) + "]");
        check(p.at.pos >= 0 && p.at.pos < T, "patch position " + std::to_string(p.at.pos) +
                                                 " out of range for a sequence of " +
                                                 std::to_string(T) + " tokens");
        check(p.values.size() == dims.d_model, "patch vector dimension " +
                                                   std::to_string(p.values.size()) +
                                                   " != d_model " + std::to_string(dims.d_model));
    }

    auto apply_patches = [&](int layer, MatX<S>& x) {
        for (const auto& p : patches) {
            if (p.at.layer != layer) continue;
            if (p.mode == PatchMode::overwrite) {
                x.row(p.at.pos) = p.values.transpose();
            } else {
                x.row(p.at.pos) += p.values.transpose();
            }
        }
    };

    std::vector<MatX<S>> stream(static_cast<size_t>(dims.n_layers) + 1);
    MatX<S> x(T, dims.d_model);
    for (Eigen::Index t = 0; t < T; ++t) {
        const TokenId tok = tokens[static_cast<size_t>(t)];
        check(tok >= 0 && tok < dims.vocab_size, "token id out of range");
        x.row(t) = w.tok_emb.row(tok) + w.pos_emb.row(t);
    }
    apply_patches(0, x);
    stream[0] = x;

    if (kv_out) kv_out->allocate(dims);

    MatX<S> ln_out, qkv, att_cat, h1, act;
    for (int b = 0; b < dims.n_layers; ++b) {
        const auto& blk = w.blocks[static_cast<size_t>(b)];
        layer_norm_rows(x, blk.ln1_g, blk.ln1_b, ln_out);
        qkv.noalias() = ln_out * blk.w_qkv;
        qkv.rowwise() += blk.b_qkv.transpose();
        if (kv_out) {
            kv_out->k[static_cast<size_t>(b)].topRows(T) = qkv.block(0, dims.d_model, T, dims.d_model);
            kv_out->v[static_cast<size_t>(b)].topRows(T) =
                qkv.block(0, 2 * dims.d_model, T, dims.d_model);
        }
        attention_full<S>(dims, qkv, att_cat, nullptr);
        x.noalias() += att_cat * blk.w_proj;
        x.rowwise() += blk.b_proj.transpose();

        layer_norm_rows(x, blk.ln2_g, blk.ln2_b, ln_out);
        h1.noalias() = ln_out * blk.w_fc1;
        h1.rowwise() += blk.b_fc1.transpose();
        act = h1.unaryExpr([](S v) { return gelu_one(v); });
        x.noalias() += act * blk.w_fc2;
        x.rowwise() += blk.b_fc2.transpose();

        apply_patches(b + 1, x);
        stream[static_cast<size_t>(b) + 1] = x;
    }
    if (kv_out) kv_out->len = static_cast<int>(T);
    return stream;
}

template <typename S>
inline ForwardOut<S> forward(const Weights<S>& w, const std::vector<TokenId>& tokens,
                             const std::vector<Patch<S>>& patches,
                             const std::vector<TapPoint>& taps, bool full_logits,
                             KvCache<S>* kv_out = nullptr) {
    const NetDims& dims = w.dims;
    auto stream = run_stream(w, tokens, patches, kv_out);
    const auto T = static_cast<Eigen::Index>(tokens.size());

    ForwardOut<S> out;
    out.tapped.reserve(taps.size());
    for (const auto& tap : taps) {
        check(tap.layer >= 0 && tap.layer <= dims.n_layers, "tap layer out of range");
        check(tap.pos >= 0 && tap.pos < T, "tap position out of range");
        out.tapped.push_back(stream[static_cast<size_t>(tap.layer)].row(tap.pos).transpose());
    }

    const MatX<S>& final_stream = stream.back();
    if (full_logits) {
        MatX<S> y;
        layer_norm_rows(final_stream, w.lnf_g, w.lnf_b, y);
        out.logits.noalias() = y * w.w_unembed;
        out.last_logits = out.logits.row(T - 1);
    } else {
        // Row path: the result depends only on the final residual row, so two
        // prompts with identical patched rows produce identical logits.
        RowX<S> row = final_stream.row(T - 1);
        RowX<S> y = layer_norm_row<S>(row, w.lnf_g, w.lnf_b);
        out.last_logits.noalias() = y * w.w_unembed;
    }
    return out;
}

// Appends one token and returns the logits at its position. Newly generated
// positions are never patched.
template <typename S>
inline RowX<S> decode_step(const Weights<S>& w, KvCache<S>& cache, TokenId token) {
    const NetDims& dims = w.dims;
    const int pos = cache.len;
    check(pos < dims.context_len, "decode: context length exceeded");
    check(token >= 0 && token < dims.vocab_size, "decode: token id out of range");
    const int d = dims.d_model, H = dims.n_heads, hs = dims.head_dim();
    const S scale = S(1) / std::sqrt(static_cast<S>(hs));

    RowX<S> x = w.tok_emb.row(token) + w.pos_emb.row(pos);
    RowX<S> a, qkv_row, att(d), h1;
    for (int b = 0; b < dims.n_layers; ++b) {
        const auto& blk = w.blocks[static_cast<size_t>(b)];
        a = layer_norm_row<S>(x, blk.ln1_g, blk.ln1_b);
        qkv_row.noalias() = a * blk.w_qkv;
        qkv_row += blk.b_qkv.transpose();
        auto& K = cache.k[static_cast<size_t>(b)];
        auto& V = cache.v[static_cast<size_t>(b)];
        K.row(pos) = qkv_row.segment(d, d);
        V.row(pos) = qkv_row.segment(2 * d, d);
        for (int h = 0; h < H; ++h) {
            auto q = qkv_row.segment(h * hs, hs);
            auto keys = K.block(0, h * hs, pos + 1, hs);
            auto vals = V.block(0, h * hs, pos + 1, hs);
            VecX<S> scores = keys * q.transpose();
            scores *= scale;
            const S mx = scores.maxCoeff();
            VecX<S> e = (scores.array() - mx).exp();
            e /= e.sum();
            att.segment(h * hs, hs).noalias() = e.transpose() * vals;
        }
        x.noalias() += att * blk.w_proj;
        x += blk.b_proj.transpose();
        a = layer_norm_row<S>(x, blk.ln2_g, blk.ln2_b);
        h1.noalias() = a * blk.w_fc1;
        h1 += blk.b_fc1.transpose();
        h1 = h1.unaryExpr([](S v) { return gelu_one(v); });
        x.noalias() += h1 * blk.w_fc2;
        x += blk.b_fc2.transpose();
    }
    cache.len = pos + 1;
    RowX<S> y = layer_norm_row<S>(x, w.lnf_g, w.lnf_b);
    RowX<S> logits;
    logits.noalias() = y * w.w_unembed;
    return logits;
}

// ---------------------------------------------------------------------------
// Training: forward + backward for next-token cross-entropy on masked targets.
// Accumulates the gradient of the SUM of masked token losses into `grad`;
// callers normalize by the total mask count.
// ---------------------------------------------------------------------------

struct LossStats {
    double loss_sum = 0.0;
    int64_t mask_count = 0;
};

template <typename S>
inline LossStats forward_backward(const Weights<S>& w, const std::vector<TokenId>& tokens,
                                  const std::vector<uint8_t>& target_mask, Weights<S>& grad) {
    const NetDims& dims = w.dims;
    const auto T = static_cast<Eigen::Index>(tokens.size());
    check(T >= 2, "training episode needs at least 2 tokens");
    check(target_mask.size() == static_cast<size_t>(T) - 1, "target mask length mismatch");
    const int d = dims.d_model, H = dims.n_heads, hs = dims.head_dim(), m = dims.mlp_hidden;
    const int L = dims.n_layers;
    const S scale = S(1) / std::sqrt(static_cast<S>(hs));

    // ---- forward, caching what backward needs
    std::vector<MatX<S>> stream(static_cast<size_t>(L) + 1);
    struct BlockCache {
        MatX<S> ln1_out, qkv, att_cat, ln2_out, h1;
        VecX<S> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
        std::vector<MatX<S>> probs;
    };
    std::vector<BlockCache> cache(static_cast<size_t>(L));

    MatX<S> x(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
        x.row(t) = w.tok_emb.row(tokens[static_cast<size_t>(t)]) + w.pos_emb.row(t);
    }
    stream[0] = x;
    for (int b = 0; b < L; ++b) {
        const auto& blk = w.blocks[static_cast<size_t>(b)];
        auto& c = cache[static_cast<size_t>(b)];
        layer_norm_rows(x, blk.ln1_g, blk.ln1_b, c.ln1_out, &c.ln1_mean, &c.ln1_rstd);
        c.qkv.noalias() = c.ln1_out * blk.w_qkv;
        c.qkv.rowwise() += blk.b_qkv.transpose();
        attention_full<S>(dims, c.qkv, c.att_cat, &c.probs);
        x.noalias() += c.att_cat * blk.w_proj;
        x.rowwise() += blk.b_proj.transpose();
        layer_norm_rows(x, blk.ln2_g, blk.ln2_b, c.ln2_out, &c.ln2_mean, &c.ln2_rstd);
        c.h1.noalias() = c.ln2_out * blk.w_fc1;
        c.h1.rowwise() += blk.b_fc1.transpose();
        MatX<S> act = c.h1.unaryExpr([](S v) { return gelu_one(v); });
        x.noalias() += act * blk.w_fc2;
        x.rowwise() += blk.b_fc2.transpose();
        stream[static_cast<size_t>(b) + 1] = x;
    }

    MatX<S> y;
    VecX<S> lnf_mean, lnf_rstd;
    layer_norm_rows(x, w.lnf_g, w.lnf_b, y, &lnf_mean, &lnf_rstd);

    // ---- loss and dY on masked rows only
    std::vector<Eigen::Index> rows;
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        if (target_mask[static_cast<size_t>(t)]) rows.push_back(t);
    }
    LossStats stats;
    stats.mask_count = static_cast<int64_t>(rows.size());
    MatX<S> dy = MatX<S>::Zero(T, d);
    if (!rows.empty()) {
        const auto M = static_cast<Eigen::Index>(rows.size());
        MatX<S> ym(M, d);
        for (Eigen::Index i = 0; i < M; ++i) ym.row(i) = y.row(rows[static_cast<size_t>(i)]);
        MatX<S> logits;
        logits.noalias() = ym * w.w_unembed;
        for (Eigen::Index i = 0; i < M; ++i) {
            auto row = logits.row(i);
            const S mx = row.maxCoeff();
            const S lse = mx + std::log((row.array() - mx).exp().sum());
            const TokenId target = tokens[static_cast<size_t>(rows[static_cast<size_t>(i)]) + 1];
            stats.loss_sum += static_cast<double>(lse - row(target));
            // in place: softmax - onehot
            row = (row.array() - lse).exp();
            row(target) -= S(1);
        }
        grad.w_unembed.noalias() += ym.transpose() * logits;
        MatX<S> dym;
        dym.noalias() = logits * w.w_unembed.transpose();
        for (Eigen::Index i = 0; i < M; ++i) dy.row(rows[static_cast<size_t>(i)]) = dym.row(i);
    }

    // ---- backward
    MatX<S> dx;
    layer_norm_backward(stream[static_cast<size_t>(L)], lnf_mean, lnf_rstd, w.lnf_g, dy, dx,
                        grad.lnf_g, grad.lnf_b);

    MatX<S> d_act, d_h1, d_ln2, d_mid, d_att, d_qkv, d_ln1, d_prev, ds;
    for (int b = L - 1; b >= 0; --b) {
        const auto& blk = w.blocks[static_cast<size_t>(b)];
        auto& g = grad.blocks[static_cast<size_t>(b)];
        auto& c = cache[static_cast<size_t>(b)];
        const MatX<S>& x_in = stream[static_cast<size_t>(b)];
        // recompute the attention-residual stream (input to ln2)
        MatX<S> x_mid = x_in + c.att_cat * blk.w_proj;
        x_mid.rowwise() += blk.b_proj.transpose();

        // MLP
        MatX<S> act = c.h1.unaryExpr([](S v) { return gelu_one(v); });
        d_act.noalias() = dx * blk.w_fc2.transpose();
        g.w_fc2.noalias() += act.transpose() * dx;
        g.b_fc2 += dx.colwise().sum().transpose();
        d_h1 = d_act.cwiseProduct(c.h1.unaryExpr([](S v) { return gelu_grad_one(v); }));
        g.w_fc1.noalias() += c.ln2_out.transpose() * d_h1;
        g.b_fc1 += d_h1.colwise().sum().transpose();
        d_ln2.noalias() = d_h1 * blk.w_fc1.transpose();
        layer_norm_backward(x_mid, c.ln2_mean, c.ln2_rstd, blk.ln2_g, d_ln2, d_mid, g.ln2_g,
                            g.ln2_b);
        d_mid += dx;  // residual connection

        // attention projection
        d_att.noalias() = d_mid * blk.w_proj.transpose();
        g.w_proj.noalias() += c.att_cat.transpose() * d_mid;
        g.b_proj += d_mid.colwise().sum().transpose();

        // per-head attention backward
        d_qkv.setZero(T, 3 * d);
        for (int h = 0; h < H; ++h) {
            const auto& P = c.probs[static_cast<size_t>(h)];
            auto q = c.qkv.block(0, h * hs, T, hs);
            auto k = c.qkv.block(0, d + h * hs, T, hs);
            auto v = c.qkv.block(0, 2 * d + h * hs, T, hs);
            auto d_out = d_att.block(0, h * hs, T, hs);
            d_qkv.block(0, 2 * d + h * hs, T, hs).noalias() = P.transpose() * d_out;
            ds.noalias() = d_out * v.transpose();  // dP
            // softmax backward row-wise; masked entries have P == 0
            for (Eigen::Index i = 0; i < T; ++i) {
                const S dot = (ds.row(i).array() * P.row(i).array()).sum();
                ds.row(i) = (P.row(i).array() * (ds.row(i).array() - dot)).matrix();
            }
            ds *= scale;
            d_qkv.block(0, h * hs, T, hs).noalias() = ds * k;
            d_qkv.block(0, d + h * hs, T, hs).noalias() = ds.transpose() * q;
        }
        g.w_qkv.noalias() += c.ln1_out.transpose() * d_qkv;
        g.b_qkv += d_qkv.colwise().sum().transpose();
        d_ln1.noalias() = d_qkv * blk.w_qkv.transpose();
        layer_norm_backward(x_in, c.ln1_mean, c.ln1_rstd, blk.ln1_g, d_ln1, d_prev, g.ln1_g,
                            g.ln1_b);
        dx = d_mid + d_prev;
    }

    for (Eigen::Index t = 0; t < T; ++t) {
        grad.tok_emb.row(tokens[static_cast<size_t>(t)]) += dx.row(t);
        grad.pos_emb.row(t) += dx.row(t);
    }
    return stats;
}

// Loss only (finite-difference oracle).
template <typename S>
inline LossStats loss_only(const Weights<S>& w, const std::vector<TokenId>& tokens,
                           const std::vector<uint8_t>& target_mask) {
    auto stream = run_stream(w, tokens, {}, static_cast<KvCache<S>*>(nullptr));
    MatX<S> y;
    layer_norm_rows(stream.back(), w.lnf_g, w.lnf_b, y);
    LossStats stats;
    const auto T = static_cast<Eigen::Index>(tokens.size());
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
        if (!target_mask[static_cast<size_t>(t)]) continue;
        RowX<S> logits;
        logits.noalias() = y.row(t) * w.w_unembed;
        const S mx = logits.maxCoeff();
        const S lse = mx + std::log((logits.array() - mx).exp().sum());
        stats.loss_sum += static_cast<double>(lse - logits(tokens[static_cast<size_t>(t) + 1]));
        stats.mask_count += 1;
    }
    return stats;
}

}  // namespace tvlab::net
