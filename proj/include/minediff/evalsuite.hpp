#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "minediff/diffusion.hpp"
#include "minediff/vocab.hpp"
#include "minediff/worldgen.hpp"

namespace minediff {

struct ConceptMetrics {
    double ratio = 0.0;  // fraction of generations the detector classifies as the concept
    double score = 0.0;  // mean detector score
    int samples = 0;
};

inline ConceptMetrics metrics_from_points(const ConceptSpec& world, const std::string& concept_name,
                                          const std::vector<Point>& points) {
    if (points.empty()) throw std::invalid_argument("metrics_from_points: empty set");
    ConceptMetrics m;
    for (const auto& p : points) {
        const double s = oracle_concept_score(world, p, concept_name);
        m.score += s;
        m.ratio += s >= 0.5 ? 1.0 : 0.0;
    }
    m.samples = static_cast<int>(points.size());
    m.ratio /= static_cast<double>(points.size());
    m.score /= static_cast<double>(points.size());
    return m;
}

// Concept Ratio / Concept Score over a prompt set, n generations per prompt.
inline ConceptMetrics concept_metrics(const DenoiserCheckpoint& ckpt, const std::vector<std::vector<int>>& prompts,
                                      int per_prompt, const ConceptSpec& world, const std::string& concept_name,
                                      uint64_t seed) {
    if (prompts.empty()) throw std::invalid_argument("concept_metrics: empty prompt set");
    if (per_prompt <= 0) throw std::invalid_argument("concept_metrics: per_prompt must be positive");
    std::vector<Point> all;
    for (size_t i = 0; i < prompts.size(); ++i) {
        const PromptEmbedding c = encode_prompt(ckpt.vocab, prompts[i]);
        const auto pts = sample(ckpt, c, per_prompt, derive_seed(seed, "concept-metrics", i));
        all.insert(all.end(), pts.begin(), pts.end());
    }
    return metrics_from_points(world, concept_name, all);
}

// ---- Frechet distance -------------------------------------------------------

namespace detail {

// cyclic Jacobi eigendecomposition for small symmetric matrices
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& eigenvalues,
                         std::vector<double>& eigenvectors) {
    eigenvectors.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigenvectors[static_cast<size_t>(i) * n + i] = 1.0;
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        }
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double cth = 1.0 / std::sqrt(t * t + 1.0);
                const double sth = t * cth;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = cth * akp - sth * akq;
                    a[static_cast<size_t>(k) * n + q] = sth * akp + cth * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = cth * apk - sth * aqk;
                    a[static_cast<size_t>(q) * n + k] = sth * apk + cth * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigenvectors[static_cast<size_t>(k) * n + p];
                    const double vkq = eigenvectors[static_cast<size_t>(k) * n + q];
                    eigenvectors[static_cast<size_t>(k) * n + p] = cth * vkp - sth * vkq;
                    eigenvectors[static_cast<size_t>(k) * n + q] = sth * vkp + cth * vkq;
                }
            }
        }
    }
    eigenvalues.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigenvalues[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
}

struct GaussianFit {
    std::vector<double> mean;
    std::vector<double> cov;  // row-major n x n
    int dim = 0;
};

inline GaussianFit fit_gaussian(const std::vector<std::vector<double>>& xs) {
    const int d = static_cast<int>(xs.front().size());
    GaussianFit g;
    g.dim = d;
    g.mean.assign(static_cast<size_t>(d), 0.0);
    for (const auto& x : xs) {
        for (int i = 0; i < d; ++i) g.mean[static_cast<size_t>(i)] += x[static_cast<size_t>(i)];
    }
    for (double& v : g.mean) v /= static_cast<double>(xs.size());
    g.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& x : xs) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                g.cov[static_cast<size_t>(i) * d + j] += (x[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)]) *
                                                         (x[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)]);
            }
        }
    }
    for (double& v : g.cov) v /= static_cast<double>(xs.size() - 1);
    return g;
}

// V f(diag) V^T for a symmetric input
inline std::vector<double> symmetric_apply(const std::vector<double>& m, int n, double (*f)(double)) {
    std::vector<double> evals, evecs;
    jacobi_eigen(m, n, evals, evecs);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double fv = f(std::max(0.0, evals[static_cast<size_t>(k)]));
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                out[static_cast<size_t>(i) * n + j] +=
                    fv * evecs[static_cast<size_t>(i) * n + k] * evecs[static_cast<size_t>(j) * n + k];
            }
        }
    }
    return out;
}

inline double min_eigenvalue(const std::vector<double>& m, int n) {
    std::vector<double> evals, evecs;
    jacobi_eigen(m, n, evals, evecs);
    double mn = evals[0];
    for (double v : evals) mn = std::min(mn, v);
    return mn;
}

}  // namespace detail

struct FrechetResult {
    double value = 0.0;
    bool regularized = false;
};

// Frechet distance between Gaussian fits of the two feature sets:
// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), symmetric PSD square root.
inline FrechetResult frechet_distance(const std::vector<std::vector<double>>& a,
                                      const std::vector<std::vector<double>>& b, double reg_eps = 1e-6) {
    if (a.empty() || b.empty()) throw std::invalid_argument("frechet_distance: empty set");
    const int d = static_cast<int>(a.front().size());
    if (static_cast<int>(b.front().size()) != d) throw std::invalid_argument("frechet_distance: dim mismatch");
    if (static_cast<int>(a.size()) < d + 1 || static_cast<int>(b.size()) < d + 1) {
        throw std::invalid_argument("frechet_distance: each set needs at least dim+1 samples");
    }
    auto ga = detail::fit_gaussian(a);
    auto gb = detail::fit_gaussian(b);

    FrechetResult result;
    if (detail::min_eigenvalue(ga.cov, d) < 1e-10 || detail::min_eigenvalue(gb.cov, d) < 1e-10) {
        result.regularized = true;
        for (int i = 0; i < d; ++i) {
            ga.cov[static_cast<size_t>(i) * d + i] += reg_eps;
            gb.cov[static_cast<size_t>(i) * d + i] += reg_eps;
        }
    }

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = ga.mean[static_cast<size_t>(i)] - gb.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }
    double trace_a = 0.0, trace_b = 0.0;
    for (int i = 0; i < d; ++i) {
        trace_a += ga.cov[static_cast<size_t>(i) * d + i];
        trace_b += gb.cov[static_cast<size_t>(i) * d + i];
    }
    // tr((S1 S2)^{1/2}) via sqrt(S1) S2 sqrt(S1), which is symmetric PSD
    const auto sqrt_a = detail::symmetric_apply(ga.cov, d, [](double x) { return std::sqrt(x); });
    std::vector<double> m(static_cast<size_t>(d) * d, 0.0);
    {
        std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < d; ++k) {
                const double s = sqrt_a[static_cast<size_t>(i) * d + k];
                for (int j = 0; j < d; ++j) tmp[static_cast<size_t>(i) * d + j] += s * gb.cov[static_cast<size_t>(k) * d + j];
            }
        }
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < d; ++k) {
                const double s = tmp[static_cast<size_t>(i) * d + k];
                for (int j = 0; j < d; ++j) m[static_cast<size_t>(i) * d + j] += s * sqrt_a[static_cast<size_t>(k) * d + j];
            }
        }
        // symmetrize against roundoff before the eigensolve
        for (int i = 0; i < d; ++i) {
            for (int j = i + 1; j < d; ++j) {
                const double avg = 0.5 * (m[static_cast<size_t>(i) * d + j] + m[static_cast<size_t>(j) * d + i]);
                m[static_cast<size_t>(i) * d + j] = avg;
                m[static_cast<size_t>(j) * d + i] = avg;
            }
        }
    }
    std::vector<double> evals, evecs;
    detail::jacobi_eigen(m, d, evals, evecs);
    double sqrt_trace = 0.0;
    for (double v : evals) sqrt_trace += std::sqrt(std::max(0.0, v));

    result.value = mean_term + trace_a + trace_b - 2.0 * sqrt_trace;
    return result;
}

inline std::vector<std::vector<double>> encode_features(const ConceptSpec& world, const std::vector<Point>& points) {
    std::vector<std::vector<double>> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(feature_encode(world, p).values);
    return out;
}

// Mean oracle posterior of each prompt's intended component; the semantic
// alignment analog for neutral prompts.
inline double prompt_fidelity(const DenoiserCheckpoint& ckpt, const std::vector<SubjectPrompt>& neutral_prompts,
                              int per_prompt, const ConceptSpec& world, uint64_t seed) {
    if (neutral_prompts.empty()) throw std::invalid_argument("prompt_fidelity: empty prompt set");
    double total = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < neutral_prompts.size(); ++i) {
        const auto& sp = neutral_prompts[i];
        if (sp.component < 0 || sp.component >= static_cast<int>(world.component_count())) {
            throw std::invalid_argument("prompt_fidelity: prompt without a component binding");
        }
        const PromptEmbedding c = encode_prompt(ckpt.vocab, sp.tokens);
        const auto pts = sample(ckpt, c, per_prompt, derive_seed(seed, "fidelity", i));
        for (const auto& p : pts) {
            total += std::exp(world.log_posteriors(p)[static_cast<size_t>(sp.component)]);
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// Mean oracle concept score of generations under gamma-scaled embeddings.
inline std::vector<std::pair<double, double>> gamma_sweep(const DenoiserCheckpoint& ckpt, const PromptEmbedding& c,
                                                          const std::vector<double>& grid, int per_gamma,
                                                          const ConceptSpec& world, const std::string& concept_name,
                                                          uint64_t seed) {
    if (grid.empty()) throw std::invalid_argument("gamma_sweep: empty grid");
    std::vector<std::pair<double, double>> out;
    for (size_t i = 0; i < grid.size(); ++i) {
        const PromptEmbedding scaled_c = scale_embedding(c, grid[i]);
        const auto pts = sample(ckpt, scaled_c, per_gamma, derive_seed(seed, "gamma", i));
        double mean = 0.0;
        for (const auto& p : pts) mean += oracle_concept_score(world, p, concept_name);
        out.emplace_back(grid[i], mean / static_cast<double>(pts.size()));
    }
    return out;
}

// Everything the comparison tables need for one checkpoint.
struct MetricsReport {
    double concept_ratio = 0.0;
    double concept_score = 0.0;
    std::map<std::string, double> attack_asr;
    double frechet = 0.0;
    bool frechet_regularized = false;
    double prompt_fidelity = 0.0;
    int concept_samples = 0;
    int fidelity_samples = 0;
    int frechet_samples = 0;
    uint64_t seed = 0;
    std::string config_hash;
};

}  // namespace minediff
