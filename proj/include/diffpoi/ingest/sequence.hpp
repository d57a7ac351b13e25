#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "diffpoi/core/error.hpp"
#include "diffpoi/ingest/geo.hpp"

namespace diffpoi::ingest {

struct SeqStep {
    std::size_t poi = 0;
    LatLon coord;
    std::int64_t timestamp = 0;
};

using Sequence = std::vector<SeqStep>;

inline Sequence truncate_latest(const Sequence& seq, std::size_t max_len = 100) {
    if (seq.size() <= max_len) return seq;
    return Sequence(seq.end() - static_cast<std::ptrdiff_t>(max_len), seq.end());
}

struct TransitionEdge {
    std::size_t src = 0;  // node index
    std::size_t dst = 0;
    std::size_t src_pos = 0;  // sequence positions of the visit pair that created the edge
    std::size_t dst_pos = 0;
};

struct TransitionGraph {
    std::vector<std::size_t> nodes;          // POI ids, first-occurrence order
    std::vector<std::size_t> node_of_position;
    std::vector<TransitionEdge> edges;       // simple directed edges, creation order

    std::size_t node_count() const { return nodes.size(); }
};

inline TransitionGraph build_transition_graph(const std::vector<std::size_t>& pois) {
    if (pois.empty()) throw DataError("build_transition_graph: empty sequence");
    TransitionGraph g;
    std::unordered_map<std::size_t, std::size_t> node_of;
    for (auto p : pois) {
        auto [it, inserted] = node_of.try_emplace(p, g.nodes.size());
        if (inserted) g.nodes.push_back(p);
        g.node_of_position.push_back(it->second);
    }
    std::unordered_map<std::uint64_t, bool> seen;
    for (std::size_t i = 0; i + 1 < pois.size(); ++i) {
        const auto a = g.node_of_position[i], b = g.node_of_position[i + 1];
        const std::uint64_t key = (static_cast<std::uint64_t>(a) << 32) | b;
        if (seen.emplace(key, true).second) g.edges.push_back({a, b, i, i + 1});
    }
    return g;
}

inline TransitionGraph build_transition_graph(const Sequence& seq) {
    std::vector<std::size_t> pois;
    pois.reserve(seq.size());
    for (const auto& s : seq) pois.push_back(s.poi);
    return build_transition_graph(pois);
}

// floor(value / unit) clipped into [0, delta - 1].
inline std::size_t discretize(double value, double unit, std::size_t delta) {
    const double q = std::floor(std::abs(value) / unit);
    if (!(q < static_cast<double>(delta - 1))) return delta - 1;
    return static_cast<std::size_t>(q);
}

// Minimum nonzero successive spatial (km) and temporal (s) gaps; 1 when every
// gap is zero.
struct IntervalUnits {
    double spatial = 1.0;
    double temporal = 1.0;
};

inline IntervalUnits interval_units(const Sequence& seq) {
    double s = std::numeric_limits<double>::infinity(), t = s;
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
        const double d = haversine(seq[i].coord, seq[i + 1].coord);
        const double dt = static_cast<double>(seq[i + 1].timestamp - seq[i].timestamp);
        if (d > 0.0) s = std::min(s, d);
        if (dt > 0.0) t = std::min(t, dt);
    }
    return {std::isfinite(s) ? s : 1.0, std::isfinite(t) ? t : 1.0};
}

struct IntervalMatrices {
    std::size_t n = 0;
    std::size_t delta_s = 256, delta_t = 256;
    std::vector<std::size_t> spatial;   // n x n row-major
    std::vector<std::size_t> temporal;  // n x n row-major

    std::size_t s(std::size_t i, std::size_t j) const { return spatial[i * n + j]; }
    std::size_t t(std::size_t i, std::size_t j) const { return temporal[i * n + j]; }
};

inline std::size_t spatial_interval(const Sequence& seq, const IntervalUnits& u, std::size_t i, std::size_t j,
                                    std::size_t delta) {
    return discretize(haversine(seq[i].coord, seq[j].coord), u.spatial, delta);
}

inline std::size_t temporal_interval(const Sequence& seq, const IntervalUnits& u, std::size_t i, std::size_t j,
                                     std::size_t delta) {
    return discretize(static_cast<double>(seq[j].timestamp - seq[i].timestamp), u.temporal, delta);
}

inline IntervalMatrices interval_matrices(const Sequence& seq, std::size_t delta_s = 256, std::size_t delta_t = 256) {
    if (delta_s == 0 || delta_t == 0) throw std::invalid_argument("interval_matrices: delta must be positive");
    IntervalMatrices m;
    m.n = seq.size();
    m.delta_s = delta_s;
    m.delta_t = delta_t;
    m.spatial.assign(m.n * m.n, 0);
    m.temporal.assign(m.n * m.n, 0);
    const auto units = interval_units(seq);
    for (std::size_t i = 0; i < m.n; ++i) {
        for (std::size_t j = i + 1; j < m.n; ++j) {
            const auto s = spatial_interval(seq, units, i, j, delta_s);
            const auto t = temporal_interval(seq, units, i, j, delta_t);
            m.spatial[i * m.n + j] = m.spatial[j * m.n + i] = s;
            m.temporal[i * m.n + j] = m.temporal[j * m.n + i] = t;
        }
    }
    return m;
}

// Interval indices for each transition edge only: the (src_pos, dst_pos)
// entries of the full matrices.
struct EdgeIntervals {
    std::vector<std::size_t> spatial;
    std::vector<std::size_t> temporal;
};

inline EdgeIntervals edge_intervals(const Sequence& seq, const TransitionGraph& g, std::size_t delta_s = 256,
                                    std::size_t delta_t = 256) {
    const auto units = interval_units(seq);
    EdgeIntervals out;
    out.spatial.reserve(g.edges.size());
    out.temporal.reserve(g.edges.size());
    for (const auto& e : g.edges) {
        out.spatial.push_back(spatial_interval(seq, units, e.src_pos, e.dst_pos, delta_s));
        out.temporal.push_back(temporal_interval(seq, units, e.src_pos, e.dst_pos, delta_t));
    }
    return out;
}

}  // namespace diffpoi::ingest
