#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "minediff/denoiser.hpp"
#include "minediff/params.hpp"
#include "minediff/rng.hpp"
#include "minediff/schedule.hpp"
#include "minediff/vocab.hpp"
#include "minediff/worldgen.hpp"

namespace minediff {

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
inline Point forward_noise(const NoiseSchedule& s, const Point& x0, int t, const Point& eps) {
    if (x0.size() != eps.size()) throw std::invalid_argument("forward_noise: shape mismatch");
    const double ab = s.alpha_bar(t);  // throws when t out of [1, T]
    Point out(x0.size());
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

// One minibatch: noised inputs grouped per distinct condition so attention
// keys/values are shared within a group.
struct DiffusionBatch {
    struct Group {
        Tensor input;   // [B_g x (data_dim + time_dim)]
        Tensor eps;     // [B_g x data_dim]
        Tensor cond;    // [L x d]
    };
    std::vector<Group> groups;
    int total_rows = 0;
};

inline Tape::Id batch_denoising_loss(Tape& tape, const ParamIds& ids, const ModelDims& dims,
                                     const DiffusionBatch& batch, bool adapters_enabled) {
    Tape::Id total = tape.constant(Tensor({1}, {0.0}));
    for (const auto& g : batch.groups) {
        const Tape::Id c = tape.constant(g.cond);
        const Tape::Id pred = tape_denoise(tape, ids, dims, g.input, c, adapters_enabled);
        total = tape.add(total, tape.sum_sq_diff(pred, tape.constant(g.eps)));
    }
    return tape.scale(total, 1.0 / static_cast<double>(batch.total_rows));
}

// Dataset points paired with tokenized prompts.
struct PromptedDataset {
    std::vector<Point> points;
    std::vector<int> prompt_of;               // per point, index into prompts
    std::vector<std::vector<int>> prompts;    // token-id sequences
};

// Pairs every sample with a prompt naming its component: a generic caption
// with probability generic_frac, otherwise a varied subject phrasing where
// tagged components alternate between their component token and the concept
// token. Phrasings are drawn from a per-subject pool so user-style prompt
// variation is covered at train time.
inline PromptedDataset build_prompted_dataset(const ConceptSpec& world, const Vocabulary& vocab,
                                              const std::string& concept_name, int n, double generic_frac,
                                              uint64_t seed, int variants_per_subject = 12,
                                              double generic_target_bias = 0.3) {
    PromptedDataset ds;
    std::map<std::string, int> prompt_index;
    auto intern = [&](const std::vector<std::string>& toks) {
        std::string key;
        for (const auto& t : toks) key += t + " ";
        auto it = prompt_index.find(key);
        if (it != prompt_index.end()) return it->second;
        const int id = static_cast<int>(ds.prompts.size());
        ds.prompts.push_back(vocab.ids(toks));
        prompt_index.emplace(key, id);
        return id;
    };

    const auto generics = generic_prompts();
    std::vector<std::vector<SubjectPrompt>> comp_pool;
    std::vector<std::vector<SubjectPrompt>> concept_pool;
    for (size_t k = 0; k < world.component_count(); ++k) {
        const std::string tok = component_token(static_cast<int>(k));
        comp_pool.push_back(build_subject_prompts({{tok, static_cast<int>(k)}}, variants_per_subject,
                                                  derive_seed(seed, "dataset.pool", k)));
        if (world.components()[k].concept_tags.count(concept_name)) {
            concept_pool.push_back(build_subject_prompts({{concept_name, -1}}, variants_per_subject,
                                                         derive_seed(seed, "dataset.pool.concept", k)));
        } else {
            concept_pool.emplace_back();
        }
    }

    const auto samples = sample_dataset(world, n, derive_seed(seed, "dataset.points"));
    Rng rng(derive_seed(seed, "dataset.prompts"));
    for (const auto& s : samples) {
        const auto k = static_cast<size_t>(s.source_component);
        std::vector<std::string> toks;
        // concept-bearing images are usually captioned with the concept, so
        // generic captions attach to them less often
        const bool tagged = !concept_pool[k].empty();
        const double generic_p = tagged ? generic_frac * generic_target_bias : generic_frac;
        if (rng.uniform() < generic_p) {
            toks = generics[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(generics.size()) - 1))];
        } else {
            const bool use_concept = !concept_pool[k].empty() && rng.uniform() < 0.5;
            const auto& pool = use_concept ? concept_pool[k] : comp_pool[k];
            toks = pool[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1))].tokens;
        }
        ds.points.push_back(s.point);
        ds.prompt_of.push_back(intern(toks));
    }
    return ds;
}

struct TrainConfig {
    int epochs = 300;
    int batch_size = 64;
    double lr = 0.05;
    int lr_decay_epoch = 200;
    double lr_decay_factor = 0.2;
    double clip_norm = 100.0;
};

struct TrainResult {
    DenoiserCheckpoint checkpoint;
    std::vector<double> epoch_losses;
};

// Builds a minibatch from dataset rows: fresh integer t ~ U[1, T] and fresh
// standard normal eps per row, grouped by prompt.
inline DiffusionBatch make_batch(const PromptedDataset& ds, const std::vector<int>& rows, const ModelDims& dims,
                                 const NoiseSchedule& sched, const Vocabulary& vocab, Rng& rng) {
    std::map<int, std::vector<int>> by_prompt;
    for (int r : rows) by_prompt[ds.prompt_of[static_cast<size_t>(r)]].push_back(r);
    DiffusionBatch batch;
    batch.total_rows = static_cast<int>(rows.size());
    for (const auto& [pid, members] : by_prompt) {
        const int b = static_cast<int>(members.size());
        Tensor x_t({b, dims.data_dim});
        Tensor eps({b, dims.data_dim});
        std::vector<int> t(static_cast<size_t>(b));
        for (int i = 0; i < b; ++i) {
            const Point& x0 = ds.points[static_cast<size_t>(members[static_cast<size_t>(i)])];
            t[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(1, sched.T));
            Point e(static_cast<size_t>(dims.data_dim));
            for (double& v : e) v = rng.normal();
            const Point noised = forward_noise(sched, x0, t[static_cast<size_t>(i)], e);
            for (int c = 0; c < dims.data_dim; ++c) {
                x_t.at(i, c) = noised[static_cast<size_t>(c)];
                eps.at(i, c) = e[static_cast<size_t>(c)];
            }
        }
        DiffusionBatch::Group g;
        g.input = denoiser_input(dims, x_t, t);
        g.eps = std::move(eps);
        g.cond = encode_prompt(vocab, ds.prompts[static_cast<size_t>(pid)]).rows;
        batch.groups.push_back(std::move(g));
    }
    return batch;
}

// Minibatch SGD on E[||eps - eps_theta(x_t | t, c)||^2].
inline TrainResult train_base(const ConceptSpec& world, const Vocabulary& vocab, const ModelDims& dims,
                              const NoiseSchedule& sched, const PromptedDataset& ds, const TrainConfig& cfg,
                              uint64_t seed) {
    if (ds.points.empty()) throw std::invalid_argument("train_base: empty dataset");
    (void)world;
    DenoiserCheckpoint ckpt;
    ckpt.dims = dims;
    ckpt.schedule = sched;
    ckpt.vocab = vocab;
    ckpt.params = init_denoiser_params(dims, derive_seed(seed, "init"));
    ckpt.has_adapters = false;
    ckpt.prov.stage = "base";

    const std::vector<std::string> wrt = base_param_names();
    Rng rng(derive_seed(seed, "train"));
    std::vector<int> order(ds.points.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = epoch >= cfg.lr_decay_epoch ? cfg.lr * cfg.lr_decay_factor : cfg.lr;
        double epoch_loss = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<int> rows(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
            const DiffusionBatch batch = make_batch(ds, rows, dims, sched, vocab, rng);
            auto program = [&](Tape& tape, const ParamIds& ids) {
                return batch_denoising_loss(tape, ids, dims, batch, false);
            };
            double loss = 0.0;
            GradientRecord grads;
            try {
                std::tie(loss, grads) = evaluate_with_gradients(program, ckpt.params, wrt);
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("train_base diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            }
            ckpt.params = sgd_step(ckpt.params, grads, lr, cfg.clip_norm);
            epoch_loss += loss;
            ++batches;
        }
        result.epoch_losses.push_back(epoch_loss / std::max(1, batches));
    }
    result.checkpoint = std::move(ckpt);
    return result;
}

// Monte-Carlo estimate of the training objective at fixed weights.
inline double mean_denoising_loss(const DenoiserCheckpoint& ckpt, const PromptedDataset& ds, int n, uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const auto row = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ds.points.size()) - 1));
        const int t = static_cast<int>(rng.uniform_int(1, ckpt.schedule.T));
        Point eps(static_cast<size_t>(ckpt.dims.data_dim));
        for (double& v : eps) v = rng.normal();
        const Point x_t = forward_noise(ckpt.schedule, ds.points[row], t, eps);
        const PromptEmbedding c = encode_prompt(ckpt.vocab, ds.prompts[static_cast<size_t>(ds.prompt_of[row])]);
        const Point pred = denoise_point(ckpt, x_t, t, c, ckpt.has_adapters);
        for (size_t j = 0; j < eps.size(); ++j) total += (eps[j] - pred[j]) * (eps[j] - pred[j]);
    }
    return total / n;
}

// Standard DDPM ancestral sampling from t=T down to 0. Each chain owns the
// substream derived from (seed, chain index), so results are deterministic
// and independent of batching.
inline std::vector<Point> sample(const DenoiserCheckpoint& ckpt, const PromptEmbedding& condition, int n,
                                 uint64_t seed, bool adapters_enabled = true) {
    if (n < 0) throw std::invalid_argument("sample: n must be non-negative");
    if (n == 0) return {};
    const ModelDims& d = ckpt.dims;
    const NoiseSchedule& s = ckpt.schedule;
    const bool use_adapters = adapters_enabled && ckpt.has_adapters;

    std::vector<Rng> chains;
    chains.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) chains.emplace_back(derive_seed(seed, "chain", static_cast<uint64_t>(i)));

    Tensor x({n, d.data_dim});
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < d.data_dim; ++c) x.at(i, c) = chains[static_cast<size_t>(i)].normal();
    }
    for (int t = s.T; t >= 1; --t) {
        const std::vector<int> steps(static_cast<size_t>(n), t);
        const Tensor eps_hat = raw_denoise(ckpt, x, steps, condition, use_adapters);
        const double alpha = s.alpha(t);
        const double ab = s.alpha_bar(t);
        const double coef = (1.0 - alpha) / std::sqrt(1.0 - ab);
        const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
        const double sigma = t > 1 ? std::sqrt((1.0 - s.alpha_bar_prev(t)) / (1.0 - ab) * s.beta(t)) : 0.0;
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < d.data_dim; ++c) {
                double xi = inv_sqrt_alpha * (x.at(i, c) - coef * eps_hat.at(i, c));
                if (t > 1) xi += sigma * chains[static_cast<size_t>(i)].normal();
                x.at(i, c) = xi;
            }
        }
    }
    std::vector<Point> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Point p(static_cast<size_t>(d.data_dim));
        for (int c = 0; c < d.data_dim; ++c) p[static_cast<size_t>(c)] = x.at(i, c);
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace minediff
