#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "minediff/rng.hpp"
#include "minediff/tensor.hpp"

namespace minediff {

struct MixtureComponent {
    double weight = 0.0;
    Point mean;
    std::vector<double> covariance;  // row-major data_dim x data_dim, SPD
    std::set<std::string> concept_tags;
};

struct LabeledSample {
    Point point;
    int source_component = 0;
};

// Log-posterior vector over components; the deterministic stand-in for an
// image encoder.
struct FeatureVector {
    std::vector<double> values;
};

namespace detail {

// lower-triangular Cholesky factor; throws on non-PD input
inline std::vector<double> cholesky(const std::vector<double>& m, int d) {
    std::vector<double> l(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = m[static_cast<size_t>(i) * d + j];
            for (int k = 0; k < j; ++k) s -= l[static_cast<size_t>(i) * d + k] * l[static_cast<size_t>(j) * d + k];
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("covariance is not positive-definite");
                l[static_cast<size_t>(i) * d + i] = std::sqrt(s);
            } else {
                l[static_cast<size_t>(i) * d + j] = s / l[static_cast<size_t>(j) * d + j];
            }
        }
    }
    return l;
}

inline double logsumexp(const std::vector<double>& xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace detail

// The synthetic world: a labeled Gaussian mixture with analytically exact
// concept posteriors. Read-only after construction.
class ConceptSpec {
public:
    ConceptSpec(int data_dim, std::vector<MixtureComponent> components, std::vector<std::string> concepts)
        : data_dim_(data_dim), components_(std::move(components)), concepts_(std::move(concepts)) {
        validate();
        precompute();
    }

    int data_dim() const { return data_dim_; }
    const std::vector<MixtureComponent>& components() const { return components_; }
    const std::vector<std::string>& concepts() const { return concepts_; }
    size_t component_count() const { return components_.size(); }

    bool has_concept(const std::string& name) const {
        return std::find(concepts_.begin(), concepts_.end(), name) != concepts_.end();
    }

    // log p(component | x) for every component
    std::vector<double> log_posteriors(const Point& x) const {
        if (static_cast<int>(x.size()) != data_dim_) throw std::invalid_argument("point dimension mismatch");
        std::vector<double> joint(components_.size());
        for (size_t k = 0; k < components_.size(); ++k) {
            joint[k] = std::log(components_[k].weight) + log_density(k, x);
        }
        const double z = detail::logsumexp(joint);
        for (double& v : joint) v -= z;
        return joint;
    }

    Point sample_component(size_t k, Rng& rng) const {
        const auto& chol = chol_[k];
        Point z(static_cast<size_t>(data_dim_));
        for (double& v : z) v = rng.normal();
        Point x = components_[k].mean;
        for (int i = 0; i < data_dim_; ++i) {
            for (int j = 0; j <= i; ++j) x[static_cast<size_t>(i)] += chol[static_cast<size_t>(i) * data_dim_ + j] * z[static_cast<size_t>(j)];
        }
        return x;
    }

    size_t pick_component(Rng& rng) const {
        const double u = rng.uniform();
        double c = 0.0;
        for (size_t k = 0; k < components_.size(); ++k) {
            c += components_[k].weight;
            if (u < c) return k;
        }
        return components_.size() - 1;
    }

private:
    int data_dim_;
    std::vector<MixtureComponent> components_;
    std::vector<std::string> concepts_;
    std::vector<std::vector<double>> chol_;
    std::vector<double> log_norm_;  // -0.5*(d*log(2pi) + logdet)

    void validate() const {
        if (data_dim_ <= 0) throw std::invalid_argument("data_dim must be positive");
        if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
        double wsum = 0.0;
        for (const auto& c : components_) {
            if (!(c.weight > 0.0)) throw std::invalid_argument("component weights must be positive");
            if (static_cast<int>(c.mean.size()) != data_dim_) throw std::invalid_argument("mean dimension mismatch");
            if (c.covariance.size() != static_cast<size_t>(data_dim_) * data_dim_) {
                throw std::invalid_argument("covariance dimension mismatch");
            }
            for (int i = 0; i < data_dim_; ++i) {
                for (int j = 0; j < i; ++j) {
                    if (std::abs(c.covariance[static_cast<size_t>(i) * data_dim_ + j] -
                                 c.covariance[static_cast<size_t>(j) * data_dim_ + i]) > 1e-12) {
                        throw std::invalid_argument("covariance is not symmetric");
                    }
                }
            }
            wsum += c.weight;
        }
        if (std::abs(wsum - 1.0) > 1e-9) throw std::invalid_argument("component weights must sum to 1");
        for (const auto& name : concepts_) {
            bool tagged = false;
            for (const auto& c : components_) tagged = tagged || c.concept_tags.count(name);
            if (!tagged) throw std::invalid_argument("concept has no tagged component: " + name);
        }
        bool neutral = false;
        for (const auto& c : components_) {
            bool carries = false;
            for (const auto& name : concepts_) carries = carries || c.concept_tags.count(name);
            neutral = neutral || !carries;
        }
        if (!neutral) throw std::invalid_argument("mixture has no neutral component");
    }

    void precompute() {
        const double log2pi = std::log(2.0 * 3.14159265358979323846);
        for (const auto& c : components_) {
            auto l = detail::cholesky(c.covariance, data_dim_);
            double logdet = 0.0;
            for (int i = 0; i < data_dim_; ++i) logdet += 2.0 * std::log(l[static_cast<size_t>(i) * data_dim_ + i]);
            log_norm_.push_back(-0.5 * (data_dim_ * log2pi + logdet));
            chol_.push_back(std::move(l));
        }
    }

    double log_density(size_t k, const Point& x) const {
        // solve L z = (x - mu) by forward substitution
        const auto& l = chol_[k];
        Point z(static_cast<size_t>(data_dim_));
        for (int i = 0; i < data_dim_; ++i) {
            double s = x[static_cast<size_t>(i)] - components_[k].mean[static_cast<size_t>(i)];
            for (int j = 0; j < i; ++j) s -= l[static_cast<size_t>(i) * data_dim_ + j] * z[static_cast<size_t>(j)];
            z[static_cast<size_t>(i)] = s / l[static_cast<size_t>(i) * data_dim_ + i];
        }
        double q = 0.0;
        for (double v : z) q += v * v;
        return log_norm_[k] - 0.5 * q;
    }
};

// Default world: six unit-covariance components on a circle of radius 8,
// components 0 and 1 tagged "target", uniform weights.
inline ConceptSpec default_world() {
    const int k = 6;
    const double radius = 8.0;
    std::vector<MixtureComponent> comps;
    for (int i = 0; i < k; ++i) {
        const double angle = 2.0 * 3.14159265358979323846 * i / k;
        MixtureComponent c;
        c.weight = 1.0 / k;
        c.mean = {radius * std::cos(angle), radius * std::sin(angle)};
        c.covariance = {1.0, 0.0, 0.0, 1.0};
        if (i < 2) c.concept_tags.insert("target");
        comps.push_back(std::move(c));
    }
    return ConceptSpec(2, std::move(comps), {"target"});
}

inline std::vector<LabeledSample> sample_dataset(const ConceptSpec& spec, int n, uint64_t seed) {
    if (n <= 0) throw std::invalid_argument("sample_dataset: n must be positive");
    Rng rng(seed);
    std::vector<LabeledSample> out;
    out.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const size_t k = spec.pick_component(rng);
        out.push_back({spec.sample_component(k, rng), static_cast<int>(k)});
    }
    return out;
}

// Exact Bayes posterior mass of the concept-tagged components at x. The
// binary detector is (score >= 0.5).
inline double oracle_concept_score(const ConceptSpec& spec, const Point& x, const std::string& concept_name) {
    if (!spec.has_concept(concept_name)) throw std::invalid_argument("unknown concept: " + concept_name);
    const auto logpost = spec.log_posteriors(x);
    double score = 0.0;
    for (size_t k = 0; k < spec.component_count(); ++k) {
        if (spec.components()[k].concept_tags.count(concept_name)) score += std::exp(logpost[k]);
    }
    return std::min(1.0, std::max(0.0, score));
}

inline FeatureVector feature_encode(const ConceptSpec& spec, const Point& x) {
    return FeatureVector{spec.log_posteriors(x)};
}

}  // namespace minediff
