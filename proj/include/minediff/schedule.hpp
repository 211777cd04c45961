#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace minediff {

// DDPM coefficients: alpha_t = 1 - beta_t, alpha_bar_t = prod_{i<=t} alpha_i.
// Index 0 corresponds to t=1.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    static NoiseSchedule linear(int steps, double beta_start, double beta_end) {
        if (steps <= 0) throw std::invalid_argument("schedule: T must be positive");
        if (!(beta_start > 0.0) || !(beta_end < 1.0) || !(beta_start <= beta_end)) {
            throw std::invalid_argument("schedule: need 0 < beta_start <= beta_end < 1");
        }
        NoiseSchedule s;
        s.T = steps;
        s.betas.resize(static_cast<size_t>(steps));
        s.alphas.resize(static_cast<size_t>(steps));
        s.alpha_bars.resize(static_cast<size_t>(steps));
        double bar = 1.0;
        for (int t = 0; t < steps; ++t) {
            const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
            const double beta = beta_start + (beta_end - beta_start) * frac;
            s.betas[static_cast<size_t>(t)] = beta;
            s.alphas[static_cast<size_t>(t)] = 1.0 - beta;
            bar *= 1.0 - beta;
            s.alpha_bars[static_cast<size_t>(t)] = bar;
        }
        return s;
    }

    double alpha(int t) const { return alphas[index(t)]; }
    double beta(int t) const { return betas[index(t)]; }
    double alpha_bar(int t) const { return alpha_bars[index(t)]; }

    // alpha_bar_{t-1}, defined as 1 for t=1
    double alpha_bar_prev(int t) const { return t <= 1 ? 1.0 : alpha_bars[index(t - 1)]; }

private:
    size_t index(int t) const {
        if (t < 1 || t > T) throw std::out_of_range("schedule: step out of range [1, T]");
        return static_cast<size_t>(t - 1);
    }
};

}  // namespace minediff
