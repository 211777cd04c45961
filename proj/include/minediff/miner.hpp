#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "minediff/diffusion.hpp"
#include "minediff/denoiser.hpp"
#include "minediff/params.hpp"
#include "minediff/rng.hpp"
#include "minediff/vocab.hpp"
#include "minediff/worldgen.hpp"

namespace minediff {

// Raised when the generator cannot produce enough concept-positive images
// within the generation budget (the model is already clean).
struct PoolBudgetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Concept exemplars; every item scored >= 0.5 by the oracle at construction.
struct ImagePool {
    std::vector<Point> items;
    std::string provenance;
    size_t capacity = 0;
};

// Append-only store of mined embeddings with their verification scores and
// the theta_0 generations cached for the circumventing loss.
struct EmbeddingPoolEntry {
    PromptEmbedding embedding;
    int loop_index = 0;
    double verify_score = 0.0;
    double mined_concept_score = 0.0;       // oracle mean at mining time
    std::vector<Point> x_batch;             // generated by theta_0 under the embedding
    std::vector<Point> x_neg_batch;         // generated by theta_0 under -embedding
};

struct EmbeddingPool {
    std::vector<EmbeddingPoolEntry> entries;

    void append(EmbeddingPoolEntry e) {
        if (!entries.empty() && e.loop_index <= entries.back().loop_index) {
            throw std::invalid_argument("embedding pool: loop indices must be strictly increasing");
        }
        entries.push_back(std::move(e));
    }

    size_t size() const { return entries.size(); }
};

// Generates with the concept-token prompt and keeps oracle-positive points.
inline ImagePool build_image_pool(const DenoiserCheckpoint& theta0, const ConceptSpec& world,
                                  const std::string& concept_name, int size, uint64_t seed,
                                  int budget_factor = 20) {
    if (size <= 0) throw std::invalid_argument("build_image_pool: size must be positive");
    const PromptEmbedding prompt = encode_prompt(theta0.vocab, {"a", concept_name, "photo"});
    ImagePool pool;
    pool.capacity = static_cast<size_t>(size);
    pool.provenance = "generated: a " + concept_name + " photo";
    const int budget = size * budget_factor;
    int generated = 0;
    int batch_index = 0;
    while (static_cast<int>(pool.items.size()) < size && generated < budget) {
        const int want = std::min(64, budget - generated);
        const auto points = sample(theta0, prompt, want, derive_seed(seed, "image-pool", static_cast<uint64_t>(batch_index++)));
        generated += want;
        for (const auto& p : points) {
            if (oracle_concept_score(world, p, concept_name) >= 0.5 && static_cast<int>(pool.items.size()) < size) {
                pool.items.push_back(p);
            }
        }
    }
    if (static_cast<int>(pool.items.size()) < size) {
        throw PoolBudgetError("image pool budget exhausted: " + std::to_string(pool.items.size()) + "/" +
                              std::to_string(size) + " concept-positive generations in " + std::to_string(generated) +
                              " attempts");
    }
    return pool;
}

struct MiningConfig {
    int k = 3;
    int embedding_length = 8;
    int steps = 1000;
    double lr = 0.01;
    int lr_decay_step = 500;
    double lr_decay_factor = 0.1;
    double clip_norm = 10.0;
    int draws_per_image = 8;  // fresh (t, eps) pairs per pool image per step
};

struct MiningResult {
    PromptEmbedding embedding;
    std::vector<int> subset;          // indices into the pool
    std::vector<double> loss_curve;
};

// Mining initialization: rows i.i.d. normal with the per-coordinate sigma
// that reproduces the embedding table's mean row norm.
inline PromptEmbedding random_embedding(const Vocabulary& vocab, int length, Rng& rng) {
    PromptEmbedding e;
    e.rows = Tensor({length, vocab.dim});
    const double sigma = vocab.mean_row_norm() / std::sqrt(static_cast<double>(vocab.dim));
    for (double& x : e.rows.v) x = rng.normal(0.0, sigma);
    e.provenance = Provenance::kMined;
    return e;
}

// One (x, t, eps) triple of the mining objective; a fixed set of these
// serves as the descent/trend validation set.
struct MiningTriple {
    Point x;
    int t = 1;
    Point eps;
};

inline std::vector<MiningTriple> make_validation_triples(const ImagePool& pool, const NoiseSchedule& sched,
                                                         int n, int data_dim, uint64_t seed) {
    Rng rng(seed);
    std::vector<MiningTriple> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        MiningTriple tr;
        tr.x = pool.items[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.items.size()) - 1))];
        tr.t = static_cast<int>(rng.uniform_int(1, sched.T));
        tr.eps = rng.normal_vec(static_cast<size_t>(data_dim));
        out.push_back(std::move(tr));
    }
    return out;
}

// Mining objective on a fixed triple set at fixed weights.
inline double mining_loss_on_triples(const DenoiserCheckpoint& ckpt, const PromptEmbedding& c,
                                     const std::vector<MiningTriple>& triples) {
    if (triples.empty()) throw std::invalid_argument("mining_loss_on_triples: empty set");
    const int b = static_cast<int>(triples.size());
    Tensor x_t({b, ckpt.dims.data_dim});
    std::vector<int> t(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        const auto& tr = triples[static_cast<size_t>(i)];
        const Point noised = forward_noise(ckpt.schedule, tr.x, tr.t, tr.eps);
        for (int col = 0; col < ckpt.dims.data_dim; ++col) x_t.at(i, col) = noised[static_cast<size_t>(col)];
        t[static_cast<size_t>(i)] = tr.t;
    }
    const Tensor pred = raw_denoise(ckpt, x_t, t, c, ckpt.has_adapters);
    double total = 0.0;
    for (int i = 0; i < b; ++i) {
        for (int col = 0; col < ckpt.dims.data_dim; ++col) {
            const double d = triples[static_cast<size_t>(i)].eps[static_cast<size_t>(col)] - pred.at(i, col);
            total += d * d;
        }
    }
    return total / b;
}

// Gradient descent on the mining loss over the embedding rows only; the model
// and adapters stay frozen. (t, eps) pairs are resampled every step.
inline MiningResult mine_embedding(const DenoiserCheckpoint& ckpt, const ImagePool& pool, const MiningConfig& cfg,
                                   const PromptEmbedding& init, uint64_t seed) {
    if (cfg.k <= 0 || cfg.k > static_cast<int>(pool.items.size())) {
        throw std::invalid_argument("mine_embedding: k must be in [1, pool size]");
    }
    if (cfg.steps < 0) throw std::invalid_argument("mine_embedding: negative step count");

    Rng rng(derive_seed(seed, "mine"));
    MiningResult result;
    result.subset = rng.sample_without_replacement(static_cast<int>(pool.items.size()), cfg.k);

    ParameterSet opt;
    opt.insert("input.embedding", init.rows);
    const std::vector<std::string> wrt = {"input.embedding"};

    const int draws = std::max(1, cfg.draws_per_image);
    for (int step = 0; step < cfg.steps; ++step) {
        const int b = cfg.k * draws;
        Tensor x_t({b, ckpt.dims.data_dim});
        Tensor eps({b, ckpt.dims.data_dim});
        std::vector<int> t(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            const Point& x0 = pool.items[static_cast<size_t>(result.subset[static_cast<size_t>(i % cfg.k)])];
            t[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(1, ckpt.schedule.T));
            Point e = rng.normal_vec(static_cast<size_t>(ckpt.dims.data_dim));
            const Point noised = forward_noise(ckpt.schedule, x0, t[static_cast<size_t>(i)], e);
            for (int col = 0; col < ckpt.dims.data_dim; ++col) {
                x_t.at(i, col) = noised[static_cast<size_t>(col)];
                eps.at(i, col) = e[static_cast<size_t>(col)];
            }
        }
        const Tensor input = denoiser_input(ckpt.dims, x_t, t);
        auto program = [&](Tape& tape, const ParamIds& ids) {
            // model weights enter as plain constants: only the embedding moves
            ParamIds model_ids;
            for (const auto& [name, tensor] : ckpt.params.values) model_ids.ids[name] = tape.constant(tensor);
            const Tape::Id pred = tape_denoise(tape, model_ids, ckpt.dims, input, ids.at("input.embedding"),
                                               ckpt.has_adapters);
            return tape.scale(tape.sum_sq_diff(pred, tape.constant(eps)), 1.0 / b);
        };
        auto [loss, grads] = evaluate_with_gradients(program, opt, wrt);
        const double lr = step >= cfg.lr_decay_step ? cfg.lr * cfg.lr_decay_factor : cfg.lr;
        opt = sgd_step(opt, grads, lr, cfg.clip_norm);
        result.loss_curve.push_back(loss);
    }

    result.embedding.rows = opt.at("input.embedding");
    result.embedding.provenance = Provenance::kMined;
    return result;
}

}  // namespace minediff
