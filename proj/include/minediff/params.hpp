#pragma once

#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "minediff/autodiff.hpp"
#include "minediff/tensor.hpp"

namespace minediff {

// Named parameter tensors with per-entry frozen flags. Frozen entries never
// receive gradient updates.
struct ParameterSet {
    std::map<std::string, Tensor> values;
    std::set<std::string> frozen;

    void insert(const std::string& name, Tensor t, bool is_frozen = false) {
        if (values.count(name)) throw std::invalid_argument("parameter already present: " + name);
        values.emplace(name, std::move(t));
        if (is_frozen) frozen.insert(name);
    }

    const Tensor& at(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("unknown parameter path: " + name);
        return it->second;
    }

    Tensor& at(const std::string& name) {
        auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("unknown parameter path: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return values.count(name) != 0; }
    bool is_frozen(const std::string& name) const { return frozen.count(name) != 0; }

    void set_frozen(const std::string& name, bool f) {
        if (!values.count(name)) throw std::invalid_argument("unknown parameter path: " + name);
        if (f) {
            frozen.insert(name);
        } else {
            frozen.erase(name);
        }
    }

    void freeze_all() {
        for (const auto& [name, t] : values) frozen.insert(name);
    }

    std::vector<std::string> non_frozen_names() const {
        std::vector<std::string> out;
        for (const auto& [name, t] : values) {
            if (!frozen.count(name)) out.push_back(name);
        }
        return out;
    }
};

using GradientRecord = std::map<std::string, Tensor>;

// Tape ids for every parameter of a build; wrt entries are leaves, the rest
// constants.
struct ParamIds {
    std::map<std::string, Tape::Id> ids;

    Tape::Id at(const std::string& name) const {
        auto it = ids.find(name);
        if (it == ids.end()) throw std::invalid_argument("unknown parameter path: " + name);
        return it->second;
    }
};

// A scalar-valued differentiable program over the parameter set.
using LossProgram = std::function<Tape::Id(Tape&, const ParamIds&)>;

namespace detail {

inline ParamIds bind_params(Tape& tape, const ParameterSet& params, const std::set<std::string>& leaves) {
    ParamIds out;
    for (const auto& [name, t] : params.values) {
        out.ids[name] = leaves.count(name) ? tape.leaf(t) : tape.constant(t);
    }
    return out;
}

inline void validate_wrt(const ParameterSet& params, const std::vector<std::string>& wrt) {
    for (const auto& name : wrt) {
        if (!params.has(name)) throw std::invalid_argument("unknown parameter path in wrt: " + name);
        if (params.is_frozen(name)) throw std::invalid_argument("wrt names frozen parameter: " + name);
    }
}

}  // namespace detail

// Evaluates the loss, returning its value. No gradients are computed.
inline double evaluate_loss(const LossProgram& loss, const ParameterSet& params) {
    Tape tape;
    ParamIds ids = detail::bind_params(tape, params, {});
    Tape::Id root = loss(tape, ids);
    const Tensor& v = tape.value(root);
    if (v.numel() != 1) throw std::invalid_argument("loss program did not produce a scalar");
    if (!v.finite()) throw std::runtime_error("non-finite loss value");
    return v.v[0];
}

// Exact reverse-mode gradients of the loss w.r.t. each named non-frozen tensor.
inline std::pair<double, GradientRecord> evaluate_with_gradients(const LossProgram& loss,
                                                                 const ParameterSet& params,
                                                                 const std::vector<std::string>& wrt) {
    detail::validate_wrt(params, wrt);
    Tape tape;
    std::set<std::string> leaves(wrt.begin(), wrt.end());
    ParamIds ids = detail::bind_params(tape, params, leaves);
    Tape::Id root = loss(tape, ids);
    const Tensor& v = tape.value(root);
    if (v.numel() != 1) throw std::invalid_argument("loss program did not produce a scalar");
    if (!v.finite()) throw std::runtime_error("non-finite loss value");
    tape.backward(root);
    GradientRecord grads;
    for (const auto& name : wrt) {
        Tape::Id id = ids.at(name);
        Tensor g = tape.has_gradient(id) ? tape.gradient(id) : Tensor(params.at(name).shape);
        if (!g.finite()) throw std::runtime_error("non-finite gradient for " + name);
        grads[name] = std::move(g);
    }
    return {v.v[0], std::move(grads)};
}

// Central-difference audit oracle: (loss(p+step) - loss(p-step)) / (2*step)
// per component of each wrt tensor.
inline GradientRecord finite_difference_gradients(const LossProgram& loss, ParameterSet params,
                                                  const std::vector<std::string>& wrt, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_gradients: step must be positive");
    detail::validate_wrt(params, wrt);
    GradientRecord out;
    for (const auto& name : wrt) {
        Tensor& t = params.at(name);
        Tensor g(t.shape);
        for (size_t i = 0; i < t.v.size(); ++i) {
            const double orig = t.v[i];
            t.v[i] = orig + step;
            const double hi = evaluate_loss(loss, params);
            t.v[i] = orig - step;
            const double lo = evaluate_loss(loss, params);
            t.v[i] = orig;
            g.v[i] = (hi - lo) / (2.0 * step);
        }
        out[name] = std::move(g);
    }
    return out;
}

// One SGD update with joint global-norm clipping across all gradient tensors.
// Frozen entries are untouched; gradient keys must name non-frozen parameters.
inline ParameterSet sgd_step(const ParameterSet& params, const GradientRecord& grads, double lr, double clip_norm) {
    if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr must be positive");
    if (!(clip_norm > 0.0)) throw std::invalid_argument("sgd_step: clip_norm must be positive");
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        if (!params.has(name)) throw std::invalid_argument("sgd_step: gradient for unknown parameter " + name);
        if (params.is_frozen(name)) throw std::invalid_argument("sgd_step: gradient for frozen parameter " + name);
        if (!params.at(name).same_shape(g)) {
            throw std::invalid_argument("sgd_step: shape mismatch for " + name);
        }
        for (double x : g.v) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    const double factor = norm > clip_norm ? clip_norm / norm : 1.0;
    ParameterSet out = params;
    for (const auto& [name, g] : grads) {
        Tensor& t = out.at(name);
        for (size_t i = 0; i < t.v.size(); ++i) t.v[i] -= lr * factor * g.v[i];
    }
    return out;
}

}  // namespace minediff
