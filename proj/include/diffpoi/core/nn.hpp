#pragma once

// Small building blocks shared by the encoders and the score network.

#include <cmath>
#include <string>

#include "diffpoi/core/parameters.hpp"
#include "diffpoi/core/random.hpp"
#include "diffpoi/core/tensor.hpp"

namespace diffpoi::core {

// Per-forward state: whether dropout is live, and the stream it draws from.
struct ForwardContext {
    bool training = false;
    double dropout = 0.0;
    Rng* rng = nullptr;
};

inline Tensor dropout(const Tensor& x, const ForwardContext& ctx) {
    if (!ctx.training || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
    const double keep = 1.0 - ctx.dropout;
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
    return multiply(x, Tensor(x.shape(), std::move(mask)));
}

// x W + b for a vector or a batch of rows.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = matmul(x, w);
    return y.rank() == 2 ? broadcast_add(y, b) : add(y, b);
}

// Single hidden layer of width d with GELU, projected back to d.
struct FeedForward {
    Tensor w1, b1, w2, b2;

    static void declare(ParameterStore& store, const std::string& prefix, std::size_t dim, Rng& rng) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
        store.add_normal(prefix + ".w1", {dim, dim}, sd, rng);
        store.add_zeros(prefix + ".b1", {dim});
        store.add_normal(prefix + ".w2", {dim, dim}, sd, rng);
        store.add_zeros(prefix + ".b2", {dim});
    }

    static FeedForward bind(const Binding& b, const std::string& prefix) {
        return {b[prefix + ".w1"], b[prefix + ".b1"], b[prefix + ".w2"], b[prefix + ".b2"]};
    }

    Tensor operator()(const Tensor& x, const ForwardContext& ctx) const {
        Tensor hidden = dropout(gelu(affine(x, w1, b1)), ctx);
        return affine(hidden, w2, b2);
    }
};

// Attention(Q, K, V) = FFN(V + Softmax(Q K^T / sqrt(d)) V), row-wise.
inline Tensor attention_block(const Tensor& q, const Tensor& k, const Tensor& v, const FeedForward& ffn,
                              const ForwardContext& ctx, Tensor* weights_out = nullptr) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Tensor weights = softmax_lastdim(scale(matmul(q, transpose(k)), inv_sqrt_d));
    if (weights_out) *weights_out = weights;
    Tensor context = dropout(matmul(weights, v), ctx);
    return ffn(add(v, context), ctx);
}

}  // namespace diffpoi::core
