#pragma once

// User-conditioned score network s_theta(v_t, x_u) and the denoising
// score-matching (Fisher) loss.

#include <cmath>
#include <string>
#include <vector>

#include "diffpoi/core/nn.hpp"
#include "diffpoi/core/parameters.hpp"
#include "diffpoi/diffusion/sde.hpp"

namespace diffpoi::diffusion {

using core::Binding;
using core::ForwardContext;
using core::ParameterStore;

struct ScoreNetConfig {
    std::size_t dim = 64;
    std::size_t hidden = 128;
    std::size_t depth = 2;          // hidden layers
    bool conditioned = true;        // false: input is v_t only
    bool time_input = false;        // append t as an extra input feature

    std::size_t input_width() const { return (conditioned ? 2 * dim : dim) + (time_input ? 1 : 0); }
};

inline void declare(ParameterStore& store, const ScoreNetConfig& cfg, core::Rng& rng) {
    if (cfg.depth == 0) throw UsageError("score net: depth must be at least 1");
    std::size_t fan_in = cfg.input_width();
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        store.add_normal("score.w" + std::to_string(l), {fan_in, cfg.hidden}, 1.0 / std::sqrt(static_cast<double>(fan_in)),
                         rng);
        store.add_zeros("score.b" + std::to_string(l), {cfg.hidden});
        fan_in = cfg.hidden;
    }
    store.add_normal("score.w_out", {fan_in, cfg.dim}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    store.add_zeros("score.b_out", {cfg.dim});
}

struct ScoreNet {
    ScoreNetConfig cfg;
    std::vector<Tensor> weights, biases;
    Tensor w_out, b_out;

    static ScoreNet bind(const Binding& b, const ScoreNetConfig& cfg) {
        ScoreNet net;
        net.cfg = cfg;
        for (std::size_t l = 0; l < cfg.depth; ++l) {
            net.weights.push_back(b["score.w" + std::to_string(l)]);
            net.biases.push_back(b["score.b" + std::to_string(l)]);
        }
        net.w_out = b["score.w_out"];
        net.b_out = b["score.b_out"];
        return net;
    }

    // Rank-1 inputs give one score; (rows, d) inputs score every row.
    Tensor operator()(const Tensor& vt, const Tensor& x_u, double t, const ForwardContext& ctx) const {
        std::vector<Tensor> parts{vt};
        if (cfg.conditioned) parts.push_back(x_u);
        if (cfg.time_input) {
            parts.push_back(vt.rank() == 2 ? Tensor::matrix(vt.rows(), 1, std::vector<double>(vt.rows(), t))
                                           : Tensor::vector({t}));
        }
        Tensor h = parts.size() == 1 ? vt : core::concat(parts);
        for (std::size_t l = 0; l < weights.size(); ++l) {
            h = core::dropout(core::gelu(core::affine(h, weights[l], biases[l])), ctx);
        }
        return core::affine(h, w_out, b_out);
    }
};

struct FisherDraw {
    double t = 0.0;
    std::vector<double> eps;
};

inline FisherDraw draw_fisher(std::size_t dim, const NoiseSchedule& sched, double t_floor, core::Rng& rng) {
    FisherDraw d;
    d.t = rng.uniform(t_floor, sched.horizon);
    d.eps = rng.normal_vector(dim);
    return d;
}

// ||s_theta(v_t, x_u) - grad log p_t(v_t | v0)||^2 for one (t, eps) draw,
// with v0 the target's location embedding.
inline Tensor fisher_loss(const Tensor& target, const ScoreFn& score, const NoiseSchedule& sched,
                          const FisherDraw& draw) {
    const Tensor vt = perturb(target, draw.t, draw.eps, sched);
    return core::l2_norm_squared(core::subtract(score(vt, draw.t), conditional_score(vt, target, draw.t, sched)));
}

inline Tensor fisher_loss(const Tensor& target, const Tensor& x_u, const ScoreNet& net, const NoiseSchedule& sched,
                          const FisherDraw& draw, const ForwardContext& ctx) {
    return fisher_loss(
        target, [&](const Tensor& v, double t) { return net(v, x_u, t, ctx); }, sched, draw);
}

}  // namespace diffpoi::diffusion
