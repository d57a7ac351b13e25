#pragma once

// Interval-aware bidirectional message passing over a user's transition
// graph, followed by a self-attention readout into x_u.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffpoi/core/nn.hpp"
#include "diffpoi/core/parameters.hpp"
#include "diffpoi/core/tensor.hpp"
#include "diffpoi/ingest/sequence.hpp"

namespace diffpoi::seqenc {

using core::Binding;
using core::FeedForward;
using core::ForwardContext;
using core::ParameterStore;
using core::Tensor;

enum class Variant { full, disen_stub, gcn, att, mean };

inline Variant parse_variant(std::string_view s) {
    if (s == "full") return Variant::full;
    if (s == "disen-stub") return Variant::disen_stub;
    if (s == "gcn") return Variant::gcn;
    if (s == "att") return Variant::att;
    if (s == "mean") return Variant::mean;
    throw UsageError("unknown seqenc_variant: " + std::string(s));
}

inline std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::disen_stub: return "disen-stub";
        case Variant::gcn: return "gcn";
        case Variant::att: return "att";
        case Variant::mean: return "mean";
    }
    return "unknown";
}

struct Config {
    std::size_t dim = 64;
    std::size_t layers = 2;  // K_seq
    std::size_t delta_s = 256;
    std::size_t delta_t = 256;
    Variant variant = Variant::full;
    std::size_t channels = 4;  // disen-stub only
};

inline std::string layer_name(const char* base, std::size_t k) { return std::string(base) + "." + std::to_string(k); }

inline bool uses_intervals(Variant v) { return v == Variant::full; }
inline bool uses_readout(Variant v) { return v != Variant::mean; }

// Only the parameters the configured variant reads are declared.
inline void declare(ParameterStore& store, const Config& cfg, core::Rng& rng) {
    const std::size_t d = cfg.dim;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    if (uses_intervals(cfg.variant)) {
        store.add_normal("seq.Es", {cfg.delta_s, d}, sd, rng);
        store.add_normal("seq.Et", {cfg.delta_t, d}, sd, rng);
    }
    for (std::size_t k = 0; k < cfg.layers; ++k) {
        if (cfg.variant == Variant::full) {
            store.add_normal(layer_name("seq.phi_in", k), {d}, sd, rng);
            store.add_normal(layer_name("seq.phi_out", k), {d}, sd, rng);
        } else if (cfg.variant == Variant::gcn) {
            store.add_normal(layer_name("seq.gcn_W", k), {d, d}, sd, rng);
        }
    }
    if (uses_readout(cfg.variant)) {
        store.add_normal("seq.WQ", {d, d}, sd, rng);
        store.add_normal("seq.WK", {d, d}, sd, rng);
        store.add_normal("seq.WV", {d, d}, sd, rng);
        FeedForward::declare(store, "seq.ffn", d, rng);
    }
}

// Gathers interval embeddings for each edge; indices must already be clipped.
struct IntervalEmbeddings {
    Tensor spatial;   // (edges, d)
    Tensor temporal;  // (edges, d)
};

inline IntervalEmbeddings embed_intervals(const ingest::EdgeIntervals& idx, const Tensor& es, const Tensor& et) {
    return {core::row_gather(es, idx.spatial), core::row_gather(et, idx.temporal)};
}

// Incidence lists of a transition graph: every edge appears once as an
// in-entry of its destination and once as an out-entry of its source.
struct Incidence {
    std::size_t nodes = 0;
    std::vector<std::size_t> in_center, in_neighbor;    // center = dst, neighbor = src
    std::vector<std::size_t> out_center, out_neighbor;  // center = src, neighbor = dst

    std::vector<std::size_t> centers() const {
        auto c = in_center;
        c.insert(c.end(), out_center.begin(), out_center.end());
        return c;
    }
    std::vector<std::size_t> neighbors() const {
        auto c = in_neighbor;
        c.insert(c.end(), out_neighbor.begin(), out_neighbor.end());
        return c;
    }
};

inline Incidence incidence(const ingest::TransitionGraph& g) {
    Incidence inc;
    inc.nodes = g.node_count();
    for (const auto& e : g.edges) {
        inc.in_center.push_back(e.dst);
        inc.in_neighbor.push_back(e.src);
        inc.out_center.push_back(e.src);
        inc.out_neighbor.push_back(e.dst);
    }
    return inc;
}

// One round of edge-wise attention: logits phi_in . (h_i * h_j + e^s + e^t)
// for in-neighbours and the phi_out analogue for out-neighbours, one softmax
// per node over all of them, and a residual update h + m.
inline Tensor message_layer(const Tensor& h, const Incidence& inc, const IntervalEmbeddings& iv, const Tensor& phi_in,
                            const Tensor& phi_out, Tensor* weights_out = nullptr) {
    if (inc.in_center.empty()) {
        if (weights_out) *weights_out = Tensor();
        return h;
    }
    const Tensor interval = core::add(iv.spatial, iv.temporal);
    const Tensor z_in = core::add(core::multiply(core::row_gather(h, inc.in_center), core::row_gather(h, inc.in_neighbor)),
                                  interval);
    const Tensor z_out =
        core::add(core::multiply(core::row_gather(h, inc.out_center), core::row_gather(h, inc.out_neighbor)), interval);
    const Tensor logits = core::concat({core::matmul(z_in, phi_in), core::matmul(z_out, phi_out)});
    const Tensor alpha = core::segment_softmax(logits, inc.centers(), inc.nodes);
    if (weights_out) *weights_out = alpha;
    const Tensor messages = core::scale_rows(core::row_gather(h, inc.neighbors()), alpha);
    return core::add(h, core::scatter_add_rows(messages, inc.centers(), inc.nodes));
}

// Mean over the undirected neighbourhood followed by a kernel.
inline Tensor gcn_message_layer(const Tensor& h, const Incidence& inc, const Tensor& w) {
    if (inc.in_center.empty()) return h;
    const auto centers = inc.centers();
    std::vector<double> deg(inc.nodes, 0.0);
    for (auto c : centers) deg[c] += 1.0;
    std::vector<double> coef(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) coef[i] = 1.0 / deg[centers[i]];
    const Tensor messages = core::scale_rows(core::row_gather(h, inc.neighbors()), Tensor::vector(std::move(coef)));
    return core::add(h, core::matmul(core::scatter_add_rows(messages, centers, inc.nodes), w));
}

// Channel routing: d is split into equal channels, each with its own
// neighbourhood softmax over channel affinities. No parameters.
inline Tensor disen_message_layer(const Tensor& h, const Incidence& inc, std::size_t channels) {
    if (inc.in_center.empty()) return h;
    const std::size_t d = h.cols();
    if (channels == 0 || d % channels != 0) throw UsageError("disen-stub: dim must be divisible by channel count");
    const std::size_t width = d / channels;
    const auto centers = inc.centers(), neighbors = inc.neighbors();
    std::vector<Tensor> parts;
    for (std::size_t c = 0; c < channels; ++c) {
        std::vector<double> sel(d * width, 0.0);
        for (std::size_t k = 0; k < width; ++k) sel[(c * width + k) * width + k] = 1.0;
        const Tensor hc = core::matmul(h, Tensor::matrix(d, width, std::move(sel)));
        const Tensor hn = core::row_gather(hc, neighbors);
        const Tensor affinity = core::mean_lastaxis(core::multiply(core::row_gather(hc, centers), hn));
        const Tensor alpha = core::segment_softmax(affinity, centers, inc.nodes);
        parts.push_back(core::scatter_add_rows(core::scale_rows(hn, alpha), centers, inc.nodes));
    }
    return core::add(h, core::concat(parts));
}

// x_u = mean over rows of FFN(V + Softmax(Q K^T / sqrt d) V).
inline Tensor readout_user(const Tensor& h, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                           const FeedForward& ffn, const ForwardContext& ctx, Tensor* weights_out = nullptr) {
    const Tensor rows = core::attention_block(core::matmul(h, wq), core::matmul(h, wk), core::matmul(h, wv), ffn, ctx,
                                              weights_out);
    return core::mean_rows(rows);
}

// Per-sequence inputs that do not depend on parameters.
struct SequenceInput {
    ingest::TransitionGraph graph;
    ingest::EdgeIntervals intervals;
    Incidence inc;
};

inline SequenceInput prepare(const ingest::Sequence& seq, const Config& cfg) {
    SequenceInput in;
    in.graph = ingest::build_transition_graph(seq);
    in.intervals = ingest::edge_intervals(seq, in.graph, cfg.delta_s, cfg.delta_t);
    in.inc = incidence(in.graph);
    return in;
}

struct Encoder {
    Config cfg;
    Tensor es, et, wq, wk, wv;
    std::vector<Tensor> phi_in, phi_out, gcn_w;
    FeedForward ffn;

    static Encoder bind(const Binding& b, const Config& cfg) {
        Encoder e;
        e.cfg = cfg;
        if (uses_intervals(cfg.variant)) {
            e.es = b["seq.Es"];
            e.et = b["seq.Et"];
        }
        for (std::size_t k = 0; k < cfg.layers; ++k) {
            if (cfg.variant == Variant::full) {
                e.phi_in.push_back(b[layer_name("seq.phi_in", k)]);
                e.phi_out.push_back(b[layer_name("seq.phi_out", k)]);
            } else if (cfg.variant == Variant::gcn) {
                e.gcn_w.push_back(b[layer_name("seq.gcn_W", k)]);
            }
        }
        if (uses_readout(cfg.variant)) {
            e.wq = b["seq.WQ"];
            e.wk = b["seq.WK"];
            e.wv = b["seq.WV"];
            e.ffn = FeedForward::bind(b, "seq.ffn");
        }
        return e;
    }

    // Node representations after message passing, one row per graph node.
    Tensor node_states(const Tensor& poi_table, const SequenceInput& in) const {
        Tensor h = core::row_gather(poi_table, in.graph.nodes);
        switch (cfg.variant) {
            case Variant::full: {
                if (in.graph.edges.empty()) return h;
                const auto iv = embed_intervals(in.intervals, es, et);
                for (std::size_t k = 0; k < cfg.layers; ++k) h = message_layer(h, in.inc, iv, phi_in[k], phi_out[k]);
                return h;
            }
            case Variant::gcn:
                for (std::size_t k = 0; k < cfg.layers; ++k) h = gcn_message_layer(h, in.inc, gcn_w[k]);
                return h;
            case Variant::disen_stub:
                for (std::size_t k = 0; k < cfg.layers; ++k) h = disen_message_layer(h, in.inc, cfg.channels);
                return h;
            case Variant::att:
            case Variant::mean:
                return h;
        }
        return h;
    }

    Tensor encode(const Tensor& poi_table, const SequenceInput& in, const ForwardContext& ctx) const {
        const Tensor h = node_states(poi_table, in);
        if (cfg.variant == Variant::mean) return core::mean_rows(h);
        return readout_user(h, wq, wk, wv, ffn, ctx);
    }
};

}  // namespace diffpoi::seqenc
