#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffpoi::ingest {

inline constexpr double kEarthRadiusKm = 6371.0;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;
};

inline bool valid_coordinate(const LatLon& p) {
    return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 && p.lon >= -180.0 &&
           p.lon <= 180.0;
}

// Great-circle distance in kilometres.
inline double haversine(const LatLon& p, const LatLon& q) {
    if (!valid_coordinate(p) || !valid_coordinate(q)) {
        throw std::domain_error("haversine: coordinate out of range");
    }
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double dlat = (q.lat - p.lat) * rad;
    const double dlon = (q.lon - p.lon) * rad;
    const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(p.lat * rad) * std::cos(q.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

struct GeoEdge {
    std::size_t i = 0;
    std::size_t j = 0;  // i < j
    double distance_km = 0.0;
    double weight = 1.0;  // exp(-distance_km)
};

// Undirected POI distance graph with exp(-d) edge weights.
struct GeoGraph {
    std::size_t node_count = 0;
    std::vector<GeoEdge> edges;

    std::vector<std::size_t> degrees() const {
        std::vector<std::size_t> deg(node_count, 0);
        for (const auto& e : edges) {
            ++deg[e.i];
            ++deg[e.j];
        }
        return deg;
    }
};

// All pairs within `threshold_km`. Candidates are pruned by latitude band:
// haversine >= R * |dlat|, so the sweep is exact.
inline GeoGraph build_geo_graph(const std::vector<LatLon>& pois, double threshold_km = 1.0) {
    GeoGraph g;
    g.node_count = pois.size();
    std::vector<std::size_t> order(pois.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) {
        return pois[a].lat < pois[b].lat || (pois[a].lat == pois[b].lat && a < b);
    });
    const double band_deg = threshold_km / kEarthRadiusKm * 180.0 / 3.14159265358979323846;
    for (std::size_t a = 0; a < order.size(); ++a) {
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            const auto& p = pois[order[a]];
            const auto& q = pois[order[b]];
            if (q.lat - p.lat > band_deg * (1.0 + 1e-9)) break;
            const double d = haversine(p, q);
            if (d <= threshold_km) {
                const auto i = std::min(order[a], order[b]);
                const auto j = std::max(order[a], order[b]);
                g.edges.push_back({i, j, d, std::exp(-d)});
            }
        }
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const GeoEdge& x, const GeoEdge& y) {
        return x.i < y.i || (x.i == y.i && x.j < y.j);
    });
    return g;
}

}  // namespace diffpoi::ingest
