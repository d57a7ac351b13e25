#pragma once

// Distance-weighted graph convolution over the global POI graph, and the
// target-attention prototype built from a user's visited POIs.

#include <cmath>
#include <string>
#include <vector>

#include "diffpoi/core/nn.hpp"
#include "diffpoi/core/parameters.hpp"
#include "diffpoi/core/tensor.hpp"
#include "diffpoi/ingest/geo.hpp"

namespace diffpoi::geoenc {

using core::Binding;
using core::FeedForward;
using core::ForwardContext;
using core::ParameterStore;
using core::Tensor;

struct Config {
    std::size_t dim = 64;
    std::size_t layers = 2;  // L
};

inline void declare(ParameterStore& store, const Config& cfg, core::Rng& rng) {
    const std::size_t d = cfg.dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0; l < cfg.layers; ++l) store.add_normal("geo.W." + std::to_string(l), {d, d}, sd, rng);
    store.add_normal("geo.WQ", {d, d}, sd, rng);
    store.add_normal("geo.WK", {d, d}, sd, rng);
    store.add_normal("geo.WV", {d, d}, sd, rng);
    FeedForward::declare(store, "geo.ffn", d, rng);
}

// Directed entries of the symmetric normalized adjacency: row `center`
// receives coef * row `neighbor`, coef = w_ij / sqrt(|N_i| |N_j|).
struct NormalizedAdjacency {
    std::size_t nodes = 0;
    std::vector<std::size_t> centers, neighbors;
    std::vector<double> coef;
};

inline NormalizedAdjacency normalize(const ingest::GeoGraph& g) {
    NormalizedAdjacency a;
    a.nodes = g.node_count;
    const auto deg = g.degrees();
    for (const auto& e : g.edges) {
        const double c = e.weight / std::sqrt(static_cast<double>(deg[e.i]) * static_cast<double>(deg[e.j]));
        a.centers.push_back(e.i);
        a.neighbors.push_back(e.j);
        a.coef.push_back(c);
        a.centers.push_back(e.j);
        a.neighbors.push_back(e.i);
        a.coef.push_back(c);
    }
    return a;
}

// H' = A_hat H W. Isolated nodes get zero rows.
inline Tensor gcn_layer(const NormalizedAdjacency& adj, const Tensor& h, const Tensor& w) {
    const Tensor hw = core::matmul(h, w);
    if (adj.centers.empty()) return core::scale(hw, 0.0);
    const Tensor msg = core::scale_rows(core::row_gather(hw, adj.neighbors), Tensor::vector(adj.coef));
    return core::scatter_add_rows(msg, adj.centers, adj.nodes);
}

// E^g = mean(H^(0), ..., H^(L)) with H^(0) = E^l.
inline Tensor geo_embeddings(const NormalizedAdjacency& adj, const Tensor& base, const std::vector<Tensor>& kernels) {
    Tensor h = base;
    Tensor total = base;
    for (const auto& w : kernels) {
        h = gcn_layer(adj, h, w);
        total = core::add(total, h);
    }
    return core::scale(total, 1.0 / static_cast<double>(kernels.size() + 1));
}

struct PrototypeAttention {
    Tensor wq, wk, wv;
    FeedForward ffn;

    static PrototypeAttention bind(const Binding& b) {
        return {b["geo.WQ"], b["geo.WK"], b["geo.WV"], FeedForward::bind(b, "geo.ffn")};
    }

    // v_hat = FFN(mean_rows(V) + Softmax(q K^T / sqrt d) V) with q = x_u W_Q and
    // K, V from the geo embeddings of the visited POIs (one row per visit).
    Tensor operator()(const Tensor& x_u, const Tensor& visited_geo, const ForwardContext& ctx,
                      Tensor* weights_out = nullptr) const {
        if (visited_geo.rank() != 2 || visited_geo.rows() == 0) {
            throw DataError("init_prototype: empty history");
        }
        return attend(x_u, core::matmul(visited_geo, wk), core::matmul(visited_geo, wv), ctx, weights_out);
    }

    // Same, with K and V rows already projected.
    Tensor attend(const Tensor& x_u, const Tensor& k, const Tensor& v, const ForwardContext& ctx,
                  Tensor* weights_out = nullptr) const {
        if (k.rank() != 2 || k.rows() == 0) throw DataError("init_prototype: empty history");
        const std::size_t d = x_u.size();
        const Tensor q = core::reshape(core::matmul(x_u, wq), {1, d});
        const Tensor weights =
            core::softmax_lastdim(core::scale(core::matmul(q, core::transpose(k)), 1.0 / std::sqrt(static_cast<double>(d))));
        if (weights_out) *weights_out = weights;
        const Tensor context = core::reshape(core::matmul(weights, v), {d});
        return ffn(core::add(core::mean_rows(v), core::dropout(context, ctx)), ctx);
    }
};

struct Encoder {
    Config cfg;
    std::vector<Tensor> kernels;
    PrototypeAttention prototype;

    static Encoder bind(const Binding& b, const Config& cfg) {
        Encoder e;
        e.cfg = cfg;
        for (std::size_t l = 0; l < cfg.layers; ++l) e.kernels.push_back(b["geo.W." + std::to_string(l)]);
        e.prototype = PrototypeAttention::bind(b);
        return e;
    }

    Tensor embeddings(const NormalizedAdjacency& adj, const Tensor& base) const {
        return geo_embeddings(adj, base, kernels);
    }
};

}  // namespace diffpoi::geoenc
