#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "minediff/autodiff.hpp"
#include "minediff/params.hpp"
#include "minediff/schedule.hpp"
#include "minediff/tensor.hpp"
#include "minediff/vocab.hpp"

namespace minediff {

struct ModelDims {
    int data_dim = 2;
    int embed_dim = 16;
    int trunk_width = 64;
    int attn_dim = 32;
    int time_dim = 8;
    int lora_rank = 8;
    double input_scale = 8.0;  // trunk sees x_t / input_scale; keeps tanh out of saturation
};

struct CheckpointProvenance {
    std::string stage;  // base | erased | baseline
    uint64_t config_hash = 0;
    uint64_t parent_hash = 0;
};

// Full denoiser state: parameters, schedule and vocabulary travel together so
// a checkpoint is self-contained.
struct DenoiserCheckpoint {
    ModelDims dims;
    NoiseSchedule schedule;
    Vocabulary vocab;
    ParameterSet params;
    bool has_adapters = false;
    CheckpointProvenance prov;
};

inline std::vector<std::string> base_param_names() {
    return {"trunk.l1.w", "trunk.l1.b", "trunk.l2.w", "trunk.l2.b", "trunk.l3.w", "trunk.l3.b",
            "attn.wq",    "attn.wk",    "attn.wv",    "attn.wout",  "head.l1.w",  "head.l1.b",
            "head.l2.w",  "head.l2.b"};
}

inline std::vector<std::string> adapter_param_names() { return {"lora.down", "lora.up"}; }

inline ParameterSet init_denoiser_params(const ModelDims& d, uint64_t seed) {
    Rng rng(seed);
    auto dense = [&](int out, int in) {
        Tensor t({out, in});
        const double sigma = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& x : t.v) x = rng.normal(0.0, sigma);
        return t;
    };
    ParameterSet p;
    const int in_dim = d.data_dim + d.time_dim;
    p.insert("trunk.l1.w", dense(d.trunk_width, in_dim));
    p.insert("trunk.l1.b", Tensor({d.trunk_width}));
    p.insert("trunk.l2.w", dense(d.trunk_width, d.trunk_width));
    p.insert("trunk.l2.b", Tensor({d.trunk_width}));
    p.insert("trunk.l3.w", dense(d.trunk_width, d.trunk_width));
    p.insert("trunk.l3.b", Tensor({d.trunk_width}));
    p.insert("attn.wq", dense(d.attn_dim, d.trunk_width));
    p.insert("attn.wk", dense(d.attn_dim, d.embed_dim));
    p.insert("attn.wv", dense(d.attn_dim, d.embed_dim));
    p.insert("attn.wout", dense(d.trunk_width, d.attn_dim));
    p.insert("head.l1.w", dense(d.trunk_width, d.trunk_width));
    p.insert("head.l1.b", Tensor({d.trunk_width}));
    p.insert("head.l2.w", dense(d.data_dim, d.trunk_width));
    p.insert("head.l2.b", Tensor({d.data_dim}));
    return p;
}

// Inserts zero-initialized LoRA tensors on the value projection and freezes
// everything else. up starts all-zero so the adapted map equals the base map.
inline void add_adapters(DenoiserCheckpoint& ckpt, uint64_t seed) {
    if (ckpt.has_adapters) throw std::invalid_argument("adapters already present");
    Rng rng(seed);
    Tensor down({ckpt.dims.lora_rank, ckpt.dims.embed_dim});
    const double sigma = 1.0 / std::sqrt(static_cast<double>(ckpt.dims.embed_dim));
    for (double& x : down.v) x = rng.normal(0.0, sigma);
    ckpt.params.insert("lora.down", std::move(down));
    ckpt.params.insert("lora.up", Tensor({ckpt.dims.attn_dim, ckpt.dims.lora_rank}));
    ckpt.params.freeze_all();
    ckpt.params.set_frozen("lora.down", false);
    ckpt.params.set_frozen("lora.up", false);
    ckpt.has_adapters = true;
}

inline double lora_scale(const ModelDims& d) { return 1.0 / static_cast<double>(d.lora_rank); }

// Sinusoidal step embedding, transformer-style frequencies.
inline std::vector<double> time_embedding(int t, int time_dim) {
    std::vector<double> out(static_cast<size_t>(time_dim));
    const int pairs = time_dim / 2;
    for (int i = 0; i < pairs; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / static_cast<double>(time_dim));
        out[static_cast<size_t>(2 * i)] = std::sin(t * freq);
        out[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    if (time_dim % 2 == 1) out[static_cast<size_t>(time_dim - 1)] = std::sin(t);
    return out;
}

// [B x (data_dim + time_dim)] input matrix from noised points and steps
inline Tensor denoiser_input(const ModelDims& d, const Tensor& x_t, const std::vector<int>& t) {
    if (x_t.cols() != d.data_dim) throw std::invalid_argument("denoiser input: data dim mismatch");
    if (static_cast<size_t>(x_t.rows()) != t.size()) throw std::invalid_argument("denoiser input: step count mismatch");
    Tensor in({x_t.rows(), d.data_dim + d.time_dim});
    for (int r = 0; r < x_t.rows(); ++r) {
        for (int c = 0; c < d.data_dim; ++c) in.at(r, c) = x_t.at(r, c) / d.input_scale;
        const auto emb = time_embedding(t[static_cast<size_t>(r)], d.time_dim);
        for (int c = 0; c < d.time_dim; ++c) in.at(r, d.data_dim + c) = emb[static_cast<size_t>(c)];
    }
    return in;
}

// Tape forward: rows of x_t share the condition c (pass per-group). Returns
// the predicted noise node [B x data_dim]. `c` may be a leaf for embedding
// optimization.
inline Tape::Id tape_denoise(Tape& tape, const ParamIds& ids, const ModelDims& d, const Tensor& input,
                             Tape::Id c, bool adapters_enabled) {
    const Tape::Id x = tape.constant(input);
    Tape::Id h = tape.tanh_op(tape.add_row(tape.matmul_nt(x, ids.at("trunk.l1.w")), ids.at("trunk.l1.b")));
    h = tape.tanh_op(tape.add_row(tape.matmul_nt(h, ids.at("trunk.l2.w")), ids.at("trunk.l2.b")));
    const Tape::Id f = tape.tanh_op(tape.add_row(tape.matmul_nt(h, ids.at("trunk.l3.w")), ids.at("trunk.l3.b")));

    const Tape::Id q = tape.matmul_nt(f, ids.at("attn.wq"));  // [B x h]
    const Tape::Id k = tape.matmul_nt(c, ids.at("attn.wk"));  // [L x h]
    Tape::Id wv = ids.at("attn.wv");
    if (adapters_enabled) {
        const Tape::Id delta = tape.scale(tape.matmul(ids.at("lora.up"), ids.at("lora.down")), lora_scale(d));
        wv = tape.add(wv, delta);
    }
    const Tape::Id v = tape.matmul_nt(c, wv);  // [L x h]
    const Tape::Id logits = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d.attn_dim)));
    const Tape::Id attn = tape.softmax_rows(logits);          // [B x L]
    const Tape::Id mixed = tape.matmul(attn, v);              // [B x h]
    const Tape::Id f2 = tape.add(f, tape.matmul_nt(mixed, ids.at("attn.wout")));
    const Tape::Id hh = tape.tanh_op(tape.add_row(tape.matmul_nt(f2, ids.at("head.l1.w")), ids.at("head.l1.b")));
    return tape.add_row(tape.matmul_nt(hh, ids.at("head.l2.w")), ids.at("head.l2.b"));
}

// Effective value projection, identical arithmetic to the tape path.
inline Tensor effective_value_weight(const DenoiserCheckpoint& ckpt, bool adapters_enabled) {
    Tensor wv = ckpt.params.at("attn.wv");
    if (adapters_enabled && ckpt.has_adapters) {
        const Tensor delta = scaled(matmul(ckpt.params.at("lora.up"), ckpt.params.at("lora.down")), lora_scale(ckpt.dims));
        wv = add(wv, delta);
    }
    return wv;
}

// Plain forward for sampling and evaluation; no tape overhead. All rows of
// x_t are denoised at step t under the shared condition.
inline Tensor raw_denoise(const DenoiserCheckpoint& ckpt, const Tensor& x_t, const std::vector<int>& t,
                          const PromptEmbedding& c, bool adapters_enabled) {
    const ModelDims& d = ckpt.dims;
    if (c.dim() != d.embed_dim) throw std::invalid_argument("raw_denoise: embedding dim mismatch");
    const ParameterSet& p = ckpt.params;
    const Tensor input = denoiser_input(d, x_t, t);

    auto layer = [&](const Tensor& in, const char* w, const char* b) {
        Tensor out = matmul_nt(in, p.at(w));
        const Tensor& bias = p.at(b);
        for (int r = 0; r < out.rows(); ++r) {
            for (int col = 0; col < out.cols(); ++col) out.at(r, col) = std::tanh(out.at(r, col) + bias.v[static_cast<size_t>(col)]);
        }
        return out;
    };
    Tensor h = layer(input, "trunk.l1.w", "trunk.l1.b");
    h = layer(h, "trunk.l2.w", "trunk.l2.b");
    const Tensor f = layer(h, "trunk.l3.w", "trunk.l3.b");

    const Tensor q = matmul_nt(f, p.at("attn.wq"));
    const Tensor k = matmul_nt(c.rows, p.at("attn.wk"));
    const Tensor v = matmul_nt(c.rows, effective_value_weight(ckpt, adapters_enabled));
    Tensor logits = matmul_nt(q, k);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d.attn_dim));
    for (double& x : logits.v) x *= inv_sqrt;
    // row softmax
    for (int r = 0; r < logits.rows(); ++r) {
        double mx = logits.at(r, 0);
        for (int j = 1; j < logits.cols(); ++j) mx = std::max(mx, logits.at(r, j));
        double z = 0.0;
        for (int j = 0; j < logits.cols(); ++j) {
            const double e = std::exp(logits.at(r, j) - mx);
            logits.at(r, j) = e;
            z += e;
        }
        for (int j = 0; j < logits.cols(); ++j) logits.at(r, j) /= z;
    }
    const Tensor mixed = matmul(logits, v);
    const Tensor f2 = add(f, matmul_nt(mixed, p.at("attn.wout")));
    const Tensor hh = layer(f2, "head.l1.w", "head.l1.b");
    Tensor out = matmul_nt(hh, p.at("head.l2.w"));
    const Tensor& hb = p.at("head.l2.b");
    for (int r = 0; r < out.rows(); ++r) {
        for (int col = 0; col < out.cols(); ++col) out.at(r, col) += hb.v[static_cast<size_t>(col)];
    }
    return out;
}

// Single-sample convenience wrapper.
inline Point denoise_point(const DenoiserCheckpoint& ckpt, const Point& x_t, int t, const PromptEmbedding& c,
                           bool adapters_enabled) {
    Tensor xt({1, static_cast<int>(x_t.size())}, x_t);
    const Tensor out = raw_denoise(ckpt, xt, {t}, c, adapters_enabled);
    return out.v;
}

}  // namespace minediff
