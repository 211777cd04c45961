#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "minediff/diffusion.hpp"
#include "minediff/miner.hpp"
#include "minediff/worldgen.hpp"

namespace minediff {

// Generation collapsed onto the reference in feature space; a distinguished
// failure, not a score.
struct DegenerateDeltaError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VerifyScore {
    double value = 0.0;
    int k = 0;
    std::vector<double> per_pair;
};

namespace detail {

constexpr double kZeroDeltaTol = 1e-9;

inline std::vector<double> feature_mean(const ConceptSpec& world, const std::vector<Point>& points) {
    std::vector<double> mean(world.component_count(), 0.0);
    for (const auto& p : points) {
        const auto f = feature_encode(world, p).values;
        for (size_t i = 0; i < mean.size(); ++i) mean[i] += f[i];
    }
    for (double& v : mean) v /= static_cast<double>(points.size());
    return mean;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na < kZeroDeltaTol || nb < kZeroDeltaTol) {
        throw DegenerateDeltaError("zero-norm delta feature");
    }
    return dot(a, b) / (na * nb);
}

inline std::vector<double> vec_sub(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

}  // namespace detail

// Delta-feature cosine score s(c): generations under c and under the anchor
// c0 are compared against the pool exemplars in encoder feature space.
// draws_per_side = 1 reproduces the single-image protocol; the default uses
// feature-space means over m draws per side.
inline VerifyScore verify_score(const DenoiserCheckpoint& ckpt, const PromptEmbedding& c,
                                const PromptEmbedding& anchor, const std::vector<Point>& pool_subset,
                                const ConceptSpec& world, int draws_per_side, uint64_t seed) {
    if (pool_subset.empty()) throw std::invalid_argument("verify_score: empty pool subset");
    if (draws_per_side <= 0) throw std::invalid_argument("verify_score: draws_per_side must be positive");
    const auto x_c = sample(ckpt, c, draws_per_side, derive_seed(seed, "verify.target"));
    const auto x_r = sample(ckpt, anchor, draws_per_side, derive_seed(seed, "verify.reference"));
    const auto f_c = detail::feature_mean(world, x_c);
    const auto f_r = detail::feature_mean(world, x_r);
    const auto delta_c = detail::vec_sub(f_c, f_r);

    VerifyScore score;
    score.k = static_cast<int>(pool_subset.size());
    for (const auto& x_e : pool_subset) {
        const auto delta_e = detail::vec_sub(feature_encode(world, x_e).values, f_r);
        score.per_pair.push_back(detail::cosine(delta_c, delta_e));
    }
    double sum = 0.0;
    for (double v : score.per_pair) sum += v;
    score.value = sum / static_cast<double>(score.per_pair.size());
    return score;
}

// Continue iff the score strictly exceeds the threshold.
inline bool verify_gate(const VerifyScore& score, double tau) { return score.value > tau; }

// Oracle-based alternative gate: mean concept score of target-side draws.
inline VerifyScore verify_score_oracle(const DenoiserCheckpoint& ckpt, const PromptEmbedding& c,
                                       const ConceptSpec& world, const std::string& concept_name,
                                       int draws, uint64_t seed) {
    const auto x_c = sample(ckpt, c, draws, derive_seed(seed, "verify.target"));
    VerifyScore score;
    score.k = draws;
    for (const auto& p : x_c) score.per_pair.push_back(oracle_concept_score(world, p, concept_name));
    double sum = 0.0;
    for (double v : score.per_pair) sum += v;
    score.value = sum / static_cast<double>(score.per_pair.size());
    return score;
}

// ---- delta-feature AUC study ------------------------------------------------

struct AucResult {
    double auc = 0.0;
    size_t positive_triples = 0;
    size_t negative_triples = 0;
    size_t degenerate_skipped = 0;
};

// Mann-Whitney AUC with tie splitting.
inline double auc_from_scores(std::vector<double> pos, std::vector<double> neg) {
    if (pos.empty() || neg.empty()) throw std::invalid_argument("auc: empty class");
    {
        const double p0 = pos.front(), n0 = neg.front();
        bool all_same = true;
        for (double v : pos) all_same = all_same && v == p0;
        for (double v : neg) all_same = all_same && v == n0;
        if (all_same && p0 == n0) throw std::runtime_error("auc: degenerate classes (all scores identical)");
    }
    std::vector<std::pair<double, int>> all;
    all.reserve(pos.size() + neg.size());
    for (double v : pos) all.emplace_back(v, 1);
    for (double v : neg) all.emplace_back(v, 0);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // rank-sum with average ranks over ties
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].first == all[i].first) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t q = i; q < j; ++q) {
            if (all[q].second == 1) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const auto np = static_cast<double>(pos.size());
    const auto nn = static_cast<double>(neg.size());
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Core of the study, exposed on raw feature sets so it is testable without a
// model: triples (target, reference, exemplar), exhaustive enumeration.
inline AucResult delta_auc_from_features(const std::vector<std::vector<double>>& concept_feats,
                                         const std::vector<std::vector<double>>& neutral_feats,
                                         const std::vector<std::vector<double>>& reference_feats,
                                         const std::function<void(int, double)>& sink = {}) {
    AucResult result;
    std::vector<double> pos, neg;
    auto run_class = [&](const std::vector<std::vector<double>>& targets, std::vector<double>& out, int label) {
        for (const auto& ft : targets) {
            for (const auto& fr : reference_feats) {
                const auto delta_t = detail::vec_sub(ft, fr);
                for (const auto& fe : concept_feats) {
                    const auto delta_e = detail::vec_sub(fe, fr);
                    try {
                        const double s = detail::cosine(delta_t, delta_e);
                        out.push_back(s);
                        if (sink) sink(label, s);
                    } catch (const DegenerateDeltaError&) {
                        ++result.degenerate_skipped;
                    }
                }
            }
        }
    };
    run_class(concept_feats, pos, 1);
    run_class(neutral_feats, neg, 0);
    result.positive_triples = pos.size();
    result.negative_triples = neg.size();
    result.auc = auc_from_scores(std::move(pos), std::move(neg));
    return result;
}

// Generates the three image sets from theta_0 and enumerates all score
// triples. Targets are labeled by the oracle (generation under "a photo" can
// still carry the concept), so classes reflect actual content.
inline AucResult delta_auc_experiment(const DenoiserCheckpoint& theta0, const ConceptSpec& world,
                                      const std::string& concept_name, int n_per_class, uint64_t seed,
                                      const std::function<void(int, double)>& sink = {}) {
    if (n_per_class <= 0) throw std::invalid_argument("delta_auc_experiment: n_per_class must be positive");
    const PromptEmbedding concept_prompt = encode_prompt(theta0.vocab, {"a", concept_name, "photo"});
    const PromptEmbedding anchor = encode_prompt(theta0.vocab, anchor_prompt_tokens());

    auto collect = [&](const PromptEmbedding& prompt, bool want_concept, const char* tag) {
        std::vector<std::vector<double>> feats;
        int batch_index = 0;
        int budget = n_per_class * 50;
        while (static_cast<int>(feats.size()) < n_per_class && budget > 0) {
            const int want = std::min(64, budget);
            const auto pts = sample(theta0, prompt, want, derive_seed(seed, tag, static_cast<uint64_t>(batch_index++)));
            budget -= want;
            for (const auto& p : pts) {
                const bool is_concept = oracle_concept_score(world, p, concept_name) >= 0.5;
                if (is_concept == want_concept && static_cast<int>(feats.size()) < n_per_class) {
                    feats.push_back(feature_encode(world, p).values);
                }
            }
        }
        if (static_cast<int>(feats.size()) < n_per_class) {
            throw std::runtime_error(std::string("delta_auc_experiment: could not collect class ") + tag);
        }
        return feats;
    };

    const auto concept_feats = collect(concept_prompt, true, "auc.concept");
    const auto neutral_feats = collect(anchor, false, "auc.neutral");
    // references are plain anchor generations, unfiltered
    std::vector<std::vector<double>> reference_feats;
    const auto refs = sample(theta0, anchor, n_per_class, derive_seed(seed, "auc.reference"));
    for (const auto& p : refs) reference_feats.push_back(feature_encode(world, p).values);

    return delta_auc_from_features(concept_feats, neutral_feats, reference_feats, sink);
}

}  // namespace minediff
