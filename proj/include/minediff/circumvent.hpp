#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "minediff/diffusion.hpp"
#include "minediff/miner.hpp"
#include "minediff/verifier.hpp"

namespace minediff {

struct CircumventConfig {
    double alpha_c = 1.0;
    double alpha_p = 0.5;
    double r = 0.7;  // probability of training on the current-loop embedding
    int epochs = 1000;
    int batch_size = 1;
    double lr = 0.01;
    int lr_decay_epoch = 800;
    double lr_decay_factor = 0.1;
    double clip_norm = 100.0;
    int max_loops = 64;
    double tau = 0.2;
    bool preserve_anchor = true;
    bool preserve_zero = true;
    bool preserve_neg = true;

    void validate() const {
        if (alpha_c < 0.0 || alpha_p < 0.0) throw std::invalid_argument("circumvent: loss weights must be >= 0");
        if (r < 0.0 || r > 1.0) throw std::invalid_argument("circumvent: r must be in [0, 1]");
        if (max_loops < 1) throw std::invalid_argument("circumvent: max_loops must be >= 1");
        if (epochs < 0 || batch_size < 1) throw std::invalid_argument("circumvent: bad epoch/batch configuration");
    }
};

namespace detail {

struct NoisedBatch {
    Tensor input;  // [B x (data_dim + time_dim)]
    Tensor x_t;
    std::vector<int> t;
};

inline NoisedBatch noise_rows(const ModelDims& dims, const NoiseSchedule& sched, const std::vector<Point>& xs,
                              const std::vector<int>& rows, Rng& rng) {
    const int b = static_cast<int>(rows.size());
    NoisedBatch out;
    out.x_t = Tensor({b, dims.data_dim});
    out.t.resize(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        const Point& x0 = xs[static_cast<size_t>(rows[static_cast<size_t>(i)])];
        out.t[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(1, sched.T));
        const Point eps = rng.normal_vec(static_cast<size_t>(dims.data_dim));
        const Point noised = forward_noise(sched, x0, out.t[static_cast<size_t>(i)], eps);
        for (int c = 0; c < dims.data_dim; ++c) out.x_t.at(i, c) = noised[static_cast<size_t>(c)];
    }
    out.input = denoiser_input(dims, out.x_t, out.t);
    return out;
}

// mean over rows of || eps_theta(x_t|t,cond_theta) - eps_theta0(x_t|t,cond_ref) ||^2
inline Tape::Id matching_term(Tape& tape, const ParamIds& ids, const DenoiserCheckpoint& theta,
                              const DenoiserCheckpoint& theta0, const NoisedBatch& nb,
                              const PromptEmbedding& cond_theta, const PromptEmbedding& cond_ref) {
    const Tensor target = raw_denoise(theta0, nb.x_t, nb.t, cond_ref, false);
    const Tape::Id pred = tape_denoise(tape, ids, theta.dims, nb.input, tape.constant(cond_theta.rows), true);
    return tape.scale(tape.sum_sq_diff(pred, tape.constant(target)), 1.0 / nb.x_t.rows());
}

}  // namespace detail

// Circumventing loss: redirect the generation distribution conditioned on c
// onto the frozen model's distribution conditioned on the anchor.
inline double circumvent_loss(const DenoiserCheckpoint& theta, const DenoiserCheckpoint& theta0,
                              const PromptEmbedding& c, const PromptEmbedding& anchor,
                              const std::vector<Point>& x_batch, const std::vector<int>& t,
                              const std::vector<Point>& eps) {
    if (x_batch.empty() || x_batch.size() != t.size() || x_batch.size() != eps.size()) {
        throw std::invalid_argument("circumvent_loss: batch size mismatch");
    }
    const int b = static_cast<int>(x_batch.size());
    Tensor x_t({b, theta.dims.data_dim});
    for (int i = 0; i < b; ++i) {
        const Point noised = forward_noise(theta.schedule, x_batch[static_cast<size_t>(i)], t[static_cast<size_t>(i)],
                                           eps[static_cast<size_t>(i)]);
        for (int col = 0; col < theta.dims.data_dim; ++col) x_t.at(i, col) = noised[static_cast<size_t>(col)];
    }
    const Tensor pred = raw_denoise(theta, x_t, t, c, true);
    const Tensor target = raw_denoise(theta0, x_t, t, anchor, false);
    double total = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        const double d = pred.v[i] - target.v[i];
        total += d * d;
    }
    if (!std::isfinite(total)) throw std::runtime_error("circumvent_loss: non-finite loss");
    return total / b;
}

// Per-condition inputs for the preserving loss. Each term compares theta and
// theta_0 at the same condition on its own batch.
struct PreserveBatch {
    std::vector<Point> x;
    std::vector<int> t;
    std::vector<Point> eps;
};

// Preserving loss: matching terms at the anchor, 0c and -c conditions.
// Disabled terms contribute zero.
inline double preserve_loss(const DenoiserCheckpoint& theta, const DenoiserCheckpoint& theta0,
                            const PromptEmbedding& c, const PromptEmbedding& anchor,
                            const PreserveBatch& anchor_batch, const PreserveBatch& zero_batch,
                            const PreserveBatch& neg_batch, bool use_anchor = true, bool use_zero = true,
                            bool use_neg = true) {
    auto term = [&](const PreserveBatch& pb, const PromptEmbedding& cond) {
        if (pb.x.empty() || pb.x.size() != pb.t.size() || pb.x.size() != pb.eps.size()) {
            throw std::invalid_argument("preserve_loss: batch size mismatch");
        }
        const int b = static_cast<int>(pb.x.size());
        Tensor x_t({b, theta.dims.data_dim});
        for (int i = 0; i < b; ++i) {
            const Point noised = forward_noise(theta.schedule, pb.x[static_cast<size_t>(i)], pb.t[static_cast<size_t>(i)],
                                               pb.eps[static_cast<size_t>(i)]);
            for (int col = 0; col < theta.dims.data_dim; ++col) x_t.at(i, col) = noised[static_cast<size_t>(col)];
        }
        const Tensor pred = raw_denoise(theta, x_t, pb.t, cond, true);
        const Tensor target = raw_denoise(theta0, x_t, pb.t, cond, false);
        double total = 0.0;
        for (size_t i = 0; i < pred.v.size(); ++i) {
            const double d = pred.v[i] - target.v[i];
            total += d * d;
        }
        return total / b;
    };
    double loss = 0.0;
    if (use_anchor) loss += term(anchor_batch, anchor);
    if (use_zero) loss += term(zero_batch, scale_embedding(c, 0.0));
    if (use_neg) loss += term(neg_batch, scale_embedding(c, -1.0));
    if (!std::isfinite(loss)) throw std::runtime_error("preserve_loss: non-finite loss");
    return loss;
}

struct TrainingSelection {
    PromptEmbedding embedding;
    int pool_index = -1;  // -1 means the current-loop embedding
};

// With probability r pick the current embedding, otherwise uniform over the
// entries mined in earlier loops. Degenerates to the current embedding when
// there is no history.
inline TrainingSelection select_training_embedding(const EmbeddingPool& pool, int current_loop,
                                                   const PromptEmbedding& current, double r, Rng& rng) {
    std::vector<int> prior;
    for (size_t i = 0; i < pool.entries.size(); ++i) {
        if (pool.entries[i].loop_index < current_loop) prior.push_back(static_cast<int>(i));
    }
    if (prior.empty() || rng.uniform() < r) return {current, -1};
    const int idx = prior[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(prior.size()) - 1))];
    return {pool.entries[static_cast<size_t>(idx)].embedding, idx};
}

// ---- full erasure loop ------------------------------------------------------

struct ErasureRunConfig {
    MiningConfig mining;
    CircumventConfig circ;
    int pool_size = 200;
    int pool_budget_factor = 20;
    int verify_draws = 16;          // generations per side for the delta score
    bool verify_oracle_tool = false;
    int concept_score_draws = 50;   // oracle draws recorded per mined embedding
    int x_batch_size = 16;          // theta_0 generations per embedding for Eq-style matching
    int validation_triples = 64;
    std::vector<std::string> anchor_tokens = anchor_prompt_tokens();
};

struct LoopRecord {
    int loop = 0;
    PromptEmbedding mined;
    double verify_value = 0.0;
    std::vector<double> verify_per_pair;
    double validation_mining_loss = 0.0;
    double mined_concept_score = 0.0;
    bool circumvented = false;
    int selected_pool_index = -1;
    std::vector<double> loss_curve;
    uint64_t checkpoint_hash = 0;
};

struct ErasureTrace {
    std::vector<LoopRecord> loops;
    std::string halt_reason;  // gate-failed | loop-cap
    EmbeddingPool embedding_pool;
    int gate_passes = 0;
};

struct ErasureResult {
    DenoiserCheckpoint checkpoint;
    ErasureTrace trace;
};

using ProgressLog = std::function<void(const std::string&)>;

inline uint64_t hash_parameter_set(const ParameterSet& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : params.values) {
        h = fnv1a64(name, h);
        h = fnv1a64(t.v.data(), t.v.size() * sizeof(double), h);
    }
    return h;
}

namespace detail {

// Shared circumvention phase: SGD on the adapters only. Returns the per-epoch
// total loss curve.
inline std::vector<double> run_circumvention(DenoiserCheckpoint& theta, const DenoiserCheckpoint& theta0,
                                             const PromptEmbedding& c, const PromptEmbedding& anchor,
                                             const CircumventConfig& cfg, const std::vector<Point>& x_c,
                                             const std::vector<Point>& x_anchor, const std::vector<Point>& x_zero,
                                             const std::vector<Point>& x_neg, uint64_t seed) {
    const std::vector<std::string> wrt = adapter_param_names();
    const PromptEmbedding zero_c = scale_embedding(c, 0.0);
    const PromptEmbedding neg_c = scale_embedding(c, -1.0);
    Rng rng(seed);
    std::vector<double> curve;
    curve.reserve(static_cast<size_t>(cfg.epochs));
    auto pick_rows = [&](size_t n) {
        std::vector<int> rows(static_cast<size_t>(cfg.batch_size));
        for (int& r : rows) r = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(n) - 1));
        return rows;
    };
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const NoisedBatch nb_c = noise_rows(theta.dims, theta.schedule, x_c, pick_rows(x_c.size()), rng);
        NoisedBatch nb_anchor, nb_zero, nb_neg;
        if (cfg.preserve_anchor) nb_anchor = noise_rows(theta.dims, theta.schedule, x_anchor, pick_rows(x_anchor.size()), rng);
        if (cfg.preserve_zero) nb_zero = noise_rows(theta.dims, theta.schedule, x_zero, pick_rows(x_zero.size()), rng);
        if (cfg.preserve_neg) nb_neg = noise_rows(theta.dims, theta.schedule, x_neg, pick_rows(x_neg.size()), rng);

        auto program = [&](Tape& tape, const ParamIds& ids) {
            Tape::Id total = tape.scale(matching_term(tape, ids, theta, theta0, nb_c, c, anchor), cfg.alpha_c);
            if (cfg.preserve_anchor) {
                total = tape.add(total, tape.scale(matching_term(tape, ids, theta, theta0, nb_anchor, anchor, anchor), cfg.alpha_p));
            }
            if (cfg.preserve_zero) {
                total = tape.add(total, tape.scale(matching_term(tape, ids, theta, theta0, nb_zero, zero_c, zero_c), cfg.alpha_p));
            }
            if (cfg.preserve_neg) {
                total = tape.add(total, tape.scale(matching_term(tape, ids, theta, theta0, nb_neg, neg_c, neg_c), cfg.alpha_p));
            }
            return total;
        };
        auto [loss, grads] = evaluate_with_gradients(program, theta.params, wrt);
        const double lr = epoch >= cfg.lr_decay_epoch ? cfg.lr * cfg.lr_decay_factor : cfg.lr;
        theta.params = sgd_step(theta.params, grads, lr, cfg.clip_norm);
        curve.push_back(loss);
    }
    return curve;
}

}  // namespace detail

// The full mine -> verify -> circumvent loop. Only adapter tensors are ever
// updated; the loop halts when the verify gate fails or the loop cap is hit.
inline ErasureResult run_erasure_loop(const DenoiserCheckpoint& theta0, const ConceptSpec& world,
                                      const std::string& concept_name, const ErasureRunConfig& cfg, uint64_t seed,
                                      int stage_cap = 0, const ProgressLog& log = {}) {
    cfg.circ.validate();
    const int cap = stage_cap > 0 ? std::min(stage_cap, cfg.circ.max_loops) : cfg.circ.max_loops;

    ErasureResult result;
    result.checkpoint = theta0;
    add_adapters(result.checkpoint, derive_seed(seed, "adapters"));
    result.checkpoint.prov.stage = "erased";
    result.checkpoint.prov.parent_hash = hash_parameter_set(theta0.params);

    const PromptEmbedding anchor = encode_prompt(theta0.vocab, cfg.anchor_tokens);
    const ImagePool pool = build_image_pool(theta0, world, concept_name, cfg.pool_size,
                                            derive_seed(seed, "pool"), cfg.pool_budget_factor);
    const auto validation = make_validation_triples(pool, theta0.schedule, cfg.validation_triples,
                                                    theta0.dims.data_dim, derive_seed(seed, "validation"));

    // condition-independent caches: the anchor and all-zero conditions
    const std::vector<Point> x_anchor = sample(theta0, anchor, cfg.x_batch_size, derive_seed(seed, "x.anchor"), false);
    PromptEmbedding zero_probe;
    zero_probe.rows = Tensor({1, theta0.dims.embed_dim});
    const std::vector<Point> x_zero = sample(theta0, zero_probe, cfg.x_batch_size, derive_seed(seed, "x.zero"), false);

    Rng select_rng(derive_seed(seed, "select"));
    ErasureTrace& trace = result.trace;
    trace.halt_reason = "loop-cap";

    for (int loop = 1; loop <= cap; ++loop) {
        const uint64_t loop_seed = derive_seed(seed, "loop", static_cast<uint64_t>(loop));
        Rng init_rng(derive_seed(loop_seed, "mine.init"));
        const PromptEmbedding init = random_embedding(theta0.vocab, cfg.mining.embedding_length, init_rng);
        const MiningResult mined = mine_embedding(result.checkpoint, pool, cfg.mining, init, loop_seed);

        LoopRecord rec;
        rec.loop = loop;
        rec.mined = mined.embedding;
        rec.validation_mining_loss = mining_loss_on_triples(result.checkpoint, mined.embedding, validation);

        std::vector<Point> subset_points;
        for (int idx : mined.subset) subset_points.push_back(pool.items[static_cast<size_t>(idx)]);
        const VerifyScore score =
            cfg.verify_oracle_tool
                ? verify_score_oracle(result.checkpoint, mined.embedding, world, concept_name, cfg.verify_draws,
                                      derive_seed(loop_seed, "verify"))
                : verify_score(result.checkpoint, mined.embedding, anchor, subset_points, world, cfg.verify_draws,
                               derive_seed(loop_seed, "verify"));
        rec.verify_value = score.value;
        rec.verify_per_pair = score.per_pair;

        {
            const auto gens = sample(result.checkpoint, mined.embedding, cfg.concept_score_draws,
                                     derive_seed(loop_seed, "concept-score"));
            double s = 0.0;
            for (const auto& p : gens) s += oracle_concept_score(world, p, concept_name);
            rec.mined_concept_score = s / static_cast<double>(gens.size());
        }

        EmbeddingPoolEntry entry;
        entry.embedding = mined.embedding;
        entry.loop_index = loop;
        entry.verify_score = score.value;
        entry.mined_concept_score = rec.mined_concept_score;
        entry.x_batch = sample(theta0, mined.embedding, cfg.x_batch_size, derive_seed(loop_seed, "x.mined"), false);
        trace.embedding_pool.append(std::move(entry));

        const bool passed = cfg.verify_oracle_tool ? score.value >= 0.5 : verify_gate(score, cfg.circ.tau);
        if (log) {
            log("loop " + std::to_string(loop) + ": verify=" + std::to_string(score.value) +
                " val_mining_loss=" + std::to_string(rec.validation_mining_loss) +
                " concept_score=" + std::to_string(rec.mined_concept_score) + (passed ? "" : " -> halt"));
        }
        if (!passed) {
            rec.checkpoint_hash = hash_parameter_set(result.checkpoint.params);
            trace.loops.push_back(std::move(rec));
            trace.halt_reason = "gate-failed";
            break;
        }

        const TrainingSelection sel = select_training_embedding(trace.embedding_pool, loop, mined.embedding,
                                                                cfg.circ.r, select_rng);
        rec.selected_pool_index = sel.pool_index;
        const std::vector<Point>& x_c = sel.pool_index < 0
                                            ? trace.embedding_pool.entries.back().x_batch
                                            : trace.embedding_pool.entries[static_cast<size_t>(sel.pool_index)].x_batch;
        const std::vector<Point> x_neg = sample(theta0, scale_embedding(sel.embedding, -1.0), cfg.x_batch_size,
                                                derive_seed(loop_seed, "x.neg"), false);
        rec.loss_curve = detail::run_circumvention(result.checkpoint, theta0, sel.embedding, anchor, cfg.circ, x_c,
                                                   x_anchor, x_zero, x_neg, derive_seed(loop_seed, "circumvent"));
        rec.circumvented = true;
        ++trace.gate_passes;
        rec.checkpoint_hash = hash_parameter_set(result.checkpoint.params);
        trace.loops.push_back(std::move(rec));
    }
    return result;
}

// Mining-ablation baseline: a single circumvention phase on the fixed
// tokenized concept prompt.
inline DenoiserCheckpoint baseline_erase(const DenoiserCheckpoint& theta0, const std::vector<std::string>& prompt_tokens,
                                         const CircumventConfig& circ, int x_batch_size,
                                         const std::vector<std::string>& anchor_tokens, uint64_t seed) {
    circ.validate();
    DenoiserCheckpoint ckpt = theta0;
    add_adapters(ckpt, derive_seed(seed, "adapters"));
    ckpt.prov.stage = "baseline";
    ckpt.prov.parent_hash = hash_parameter_set(theta0.params);

    const PromptEmbedding c = encode_prompt(theta0.vocab, prompt_tokens);
    const PromptEmbedding anchor = encode_prompt(theta0.vocab, anchor_tokens);
    const std::vector<Point> x_c = sample(theta0, c, x_batch_size, derive_seed(seed, "x.c"), false);
    const std::vector<Point> x_anchor = sample(theta0, anchor, x_batch_size, derive_seed(seed, "x.anchor"), false);
    PromptEmbedding zero_probe;
    zero_probe.rows = Tensor({1, theta0.dims.embed_dim});
    const std::vector<Point> x_zero = sample(theta0, zero_probe, x_batch_size, derive_seed(seed, "x.zero"), false);
    const std::vector<Point> x_neg = sample(theta0, scale_embedding(c, -1.0), x_batch_size, derive_seed(seed, "x.neg"), false);

    detail::run_circumvention(ckpt, theta0, c, anchor, circ, x_c, x_anchor, x_zero, x_neg,
                              derive_seed(seed, "circumvent"));
    return ckpt;
}

}  // namespace minediff
