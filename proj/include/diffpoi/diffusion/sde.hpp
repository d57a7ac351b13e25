#pragma once

// Variance-preserving SDE: linear noise schedule, closed-form perturbation
// kernel, conditional score and the reverse-time Euler-Maruyama sampler.

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffpoi/core/error.hpp"
#include "diffpoi/core/random.hpp"
#include "diffpoi/core/tensor.hpp"

namespace diffpoi::diffusion {

using core::Tensor;

struct NoiseSchedule {
    double beta_min = 0.1;
    double beta_max = 20.0;
    double horizon = 1.0;  // T

    // Strict check for user-facing configuration. The degenerate all-zero
    // schedule is still usable programmatically.
    void validate() const {
        if (!(beta_min > 0.0 && beta_min < beta_max)) {
            throw UsageError("noise schedule: need 0 < beta_min < beta_max");
        }
        if (!(horizon > 0.0)) throw UsageError("noise schedule: horizon must be positive");
    }

    void check_time(double t) const {
        if (!(t >= 0.0 && t <= horizon * (1.0 + 1e-12))) {
            throw std::domain_error("noise schedule: t=" + std::to_string(t) + " outside [0, T]");
        }
    }

    double beta(double t) const {
        check_time(t);
        return beta_min + (beta_max - beta_min) * t / horizon;
    }

    // B(t) = integral of beta over [0, t].
    double integral(double t) const {
        check_time(t);
        return beta_min * t + (beta_max - beta_min) * t * t / (2.0 * horizon);
    }
};

struct KernelStats {
    double mean_coefficient = 1.0;
    double variance = 0.0;
    double stddev = 0.0;
};

inline KernelStats kernel_stats(double t, const NoiseSchedule& s) {
    const double b = s.integral(t);
    KernelStats k;
    k.mean_coefficient = std::exp(-0.5 * b);
    k.variance = -std::expm1(-b);
    k.stddev = std::sqrt(k.variance);
    return k;
}

// v_t = m(t) v0 + sigma(t) eps
inline Tensor perturb(const Tensor& v0, double t, const std::vector<double>& eps, const NoiseSchedule& s) {
    const auto k = kernel_stats(t, s);
    std::vector<double> noise(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) noise[i] = k.stddev * eps[i];
    return core::add(core::scale(v0, k.mean_coefficient), Tensor(v0.shape(), std::move(noise)));
}

// grad_v log N(v; m v0, var I) = -(v - m v0) / var
inline Tensor conditional_score(const Tensor& vt, const Tensor& v0, double t, const NoiseSchedule& s) {
    const auto k = kernel_stats(t, s);
    if (!(k.variance > 0.0)) throw std::domain_error("conditional_score: degenerate kernel at t=" + std::to_string(t));
    return core::scale(core::subtract(vt, core::scale(v0, k.mean_coefficient)), -1.0 / k.variance);
}

struct SamplerConfig {
    double step_size = 0.01;  // Delta
    bool stochastic = true;
    bool final_noise = false;  // inject noise on the last step as well
    bool backprop = true;      // keep the trajectory on the tape

    std::size_t steps(const NoiseSchedule& s) const {
        if (!(step_size > 0.0)) throw UsageError("sampler: step size must be positive");
        const double n = s.horizon / step_size;
        const double r = std::round(n);
        if (r < 1.0 || std::abs(n - r) > 1e-9 * std::max(1.0, n)) {
            throw UsageError("sampler: step size must divide the horizon evenly");
        }
        return static_cast<std::size_t>(r);
    }
};

// Score estimate at state v and time t.
using ScoreFn = std::function<Tensor(const Tensor& v, double t)>;

// Fills `z` with standard-normal draws for the given step.
using NoiseFn = std::function<void(std::size_t step, std::span<double> z)>;

// Integrates the reverse SDE from v_hat at t = T down to t = 0:
// v += (beta v / 2 + beta s) Delta + sqrt(beta Delta) z.
// `states`, if given, receives v after every step, starting with v_hat.
inline Tensor reverse_sample_with(const Tensor& v_hat, const ScoreFn& score, const NoiseSchedule& sched,
                                  const SamplerConfig& cfg, const NoiseFn& noise,
                             std::vector<std::vector<double>>* states = nullptr) {
    const std::size_t n = cfg.steps(sched);
    if (cfg.stochastic && !noise) throw std::invalid_argument("reverse_sample: stochastic mode needs a noise source");
    Tensor v = cfg.backprop ? v_hat : v_hat.detach();
    if (states) states->push_back(v.to_vector());
    std::vector<double> z(v.size());
    for (std::size_t i = 0; i < n; ++i) {
        const double t = sched.horizon - static_cast<double>(i) * cfg.step_size;
        const double b = sched.beta(std::max(0.0, t));
        Tensor next;
        try {
            const Tensor s = score(v, t);
            Tensor drift = core::scale(core::add(core::scale(v, 0.5 * b), core::scale(s, b)), cfg.step_size);
            next = core::add(v, drift);
            if (cfg.stochastic && (i + 1 < n || cfg.final_noise)) {
                const double amp = std::sqrt(b * cfg.step_size);
                noise(i, z);
                std::vector<double> scaled(z.size());
                for (std::size_t k = 0; k < z.size(); ++k) scaled[k] = amp * z[k];
                next = core::add(next, Tensor(v.shape(), std::move(scaled)));
            }
        } catch (const NumericalError& e) {
            throw NumericalError("reverse_sample: step " + std::to_string(i) + ": " + e.what());
        }
        for (double x : next.data()) {
            if (!std::isfinite(x)) throw NumericalError("reverse_sample: non-finite state at step " + std::to_string(i));
        }
        v = cfg.backprop ? next : next.detach();
        if (states) states->push_back(v.to_vector());
    }
    return v;
}

inline Tensor reverse_sample(const Tensor& v_hat, const ScoreFn& score, const NoiseSchedule& sched,
                             const SamplerConfig& cfg, core::Rng* rng,
                             std::vector<std::vector<double>>* states = nullptr) {
    NoiseFn noise;
    if (rng) {
        noise = [rng](std::size_t, std::span<double> z) {
            for (auto& x : z) x = rng->normal();
        };
    }
    return reverse_sample_with(v_hat, score, sched, cfg, noise, states);
}

// Row r of a (rows, d) state draws from rngs[r], so each trajectory matches
// its single-row run.
inline NoiseFn row_noise(std::vector<core::Rng>& rngs) {
    return [&rngs](std::size_t, std::span<double> z) {
        const std::size_t width = z.size() / rngs.size();
        for (std::size_t r = 0; r < rngs.size(); ++r) {
            for (std::size_t k = 0; k < width; ++k) z[r * width + k] = rngs[r].normal();
        }
    };
}

}  // namespace diffpoi::diffusion
