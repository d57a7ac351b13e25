#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "diffpoi/core/error.hpp"
#include "diffpoi/core/parameters.hpp"

namespace diffpoi::core {

struct AdamState {
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step_count = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline AdamState make_adam(const ParameterStore& params, double learning_rate) {
    AdamState s;
    s.learning_rate = learning_rate;
    for (const auto& p : params.all()) {
        s.first_moment.emplace_back(p.size(), 0.0);
        s.second_moment.emplace_back(p.size(), 0.0);
    }
    return s;
}

// Bias-corrected Adam update over every trainable parameter using the
// gradients currently stored in `params`. A non-finite gradient rejects the
// whole step: nothing is modified and NumericalError names the parameter.
inline void adam_step(ParameterStore& params, AdamState& state) {
    auto& all = params.all();
    if (state.first_moment.size() != all.size()) throw ShapeError("adam_step: state does not match parameters");
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (state.first_moment[i].size() != all[i].size() || all[i].grad.size() != all[i].size()) {
            throw ShapeError("adam_step: moment/gradient shape mismatch for " + all[i].name);
        }
        for (double g : all[i].grad) {
            if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient in " + all[i].name);
        }
    }
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (!all[i].trainable) continue;
        auto& w = *all[i].value;
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto& g = all[i].grad;
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace diffpoi::core
