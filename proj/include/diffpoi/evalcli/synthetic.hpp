#pragma once

// Synthetic check-in generator: POIs in tight geographic clusters, users
// that either commute along a fixed routine between two clusters or
// wander locally inside their home cluster.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "diffpoi/core/random.hpp"
#include "diffpoi/ingest/checkin.hpp"
#include "diffpoi/ingest/dataset.hpp"
#include "diffpoi/ingest/geo.hpp"

namespace diffpoi::evalcli {

struct SyntheticConfig {
    std::size_t users = 200;
    std::size_t pois = 300;
    std::size_t clusters = 5;
    std::size_t min_visits = 30;
    std::size_t max_visits = 60;
    double commuter_share = 0.5;
    double cluster_radius_km = 0.6;
    double cluster_spacing_km = 12.0;
    double routine_noise = 0.1;  // commuter deviation probability
    std::size_t routine_length = 6;
    std::uint64_t seed = 7;
};

struct SyntheticData {
    std::vector<ingest::CheckinRecord> records;
    std::vector<std::size_t> poi_cluster;  // by generated POI number
    std::vector<bool> commuter;            // by user number
};

namespace detail {

inline std::string padded(const char* prefix, std::size_t i) {
    std::string s = std::to_string(i);
    return prefix + std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

// Offset (lat, lon) by (north, east) km.
inline ingest::LatLon offset_km(ingest::LatLon base, double north, double east) {
    const double dlat = north / ingest::kEarthRadiusKm * 180.0 / std::numbers::pi;
    const double dlon = east / (ingest::kEarthRadiusKm * std::cos(base.lat * std::numbers::pi / 180.0)) * 180.0 /
                        std::numbers::pi;
    return {base.lat + dlat, base.lon + dlon};
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
    if (cfg.clusters == 0 || cfg.pois < cfg.clusters || cfg.users == 0 || cfg.min_visits < 5 ||
        cfg.max_visits < cfg.min_visits) {
        throw UsageError("synthetic: inconsistent generator configuration");
    }
    core::Rng rng(cfg.seed);
    const ingest::LatLon origin{40.70, -74.00};
    SyntheticData out;

    std::vector<ingest::LatLon> coords(cfg.pois);
    std::vector<std::vector<std::size_t>> members(cfg.clusters);
    std::vector<double> popularity(cfg.pois);
    for (std::size_t i = 0; i < cfg.pois; ++i) {
        const std::size_t c = i % cfg.clusters;
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(cfg.clusters);
        const auto center = detail::offset_km(origin, cfg.cluster_spacing_km * std::sin(angle),
                                              cfg.cluster_spacing_km * std::cos(angle));
        const double r = cfg.cluster_radius_km * std::sqrt(rng.uniform());
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        coords[i] = detail::offset_km(center, r * std::sin(theta), r * std::cos(theta));
        members[c].push_back(i);
        out.poi_cluster.push_back(c);
        popularity[i] = 1.0 / (1.0 + static_cast<double>(members[c].size() - 1) * 0.3);
    }

    auto pick_weighted = [&](const std::vector<std::size_t>& candidates, auto weight) {
        double total = 0.0;
        for (auto p : candidates) total += weight(p);
        double x = rng.uniform() * total;
        for (auto p : candidates) {
            x -= weight(p);
            if (x <= 0.0) return p;
        }
        return candidates.back();
    };

    const std::int64_t start = 1'600'000'000;
    for (std::size_t u = 0; u < cfg.users; ++u) {
        const bool commuter = rng.uniform() < cfg.commuter_share;
        out.commuter.push_back(commuter);
        const std::size_t home = rng.index(cfg.clusters);
        std::size_t work = rng.index(cfg.clusters - (cfg.clusters > 1 ? 1 : 0));
        if (cfg.clusters > 1 && work >= home) ++work;
        const std::size_t n = cfg.min_visits + rng.index(cfg.max_visits - cfg.min_visits + 1);

        std::vector<std::size_t> routine;
        if (commuter) {
            for (std::size_t k = 0; k < cfg.routine_length; ++k) {
                const auto& pool = members[k < cfg.routine_length / 2 ? home : work];
                routine.push_back(pick_weighted(pool, [&](std::size_t p) { return popularity[p]; }));
            }
        }

        std::int64_t ts = start + static_cast<std::int64_t>(rng.index(86400));
        std::size_t current = pick_weighted(members[home], [&](std::size_t p) { return popularity[p]; });
        for (std::size_t v = 0; v < n; ++v) {
            std::size_t poi = 0;
            if (commuter) {
                poi = rng.uniform() < cfg.routine_noise
                          ? pick_weighted(members[out.poi_cluster[routine[v % routine.size()]]],
                                          [&](std::size_t p) { return popularity[p]; })
                          : routine[v % routine.size()];
            } else if (v == 0) {
                poi = current;
            } else {
                // Local wandering: nearer and more popular POIs of the home cluster are likelier.
                poi = pick_weighted(members[home], [&](std::size_t p) {
                    const double d = ingest::haversine(coords[current], coords[p]);
                    return p == current ? 0.05 : popularity[p] * std::exp(-d / 0.3);
                });
            }
            current = poi;
            out.records.push_back({detail::padded("u", u), detail::padded("p", poi), coords[poi].lat, coords[poi].lon, ts});
            ts += 1800 + static_cast<std::int64_t>(rng.index(6 * 3600));
        }
    }
    return out;
}

// Generated records through five-core filtering and the chronological split.
inline ingest::CheckinDataset synthetic_dataset(const SyntheticConfig& cfg) {
    auto data = generate_synthetic(cfg);
    auto ds = ingest::build_dataset(ingest::five_core_filter(std::move(data.records)));
    ds.provenance = {{"source", "synthetic"},
                     {"users", cfg.users},
                     {"pois", cfg.pois},
                     {"clusters", cfg.clusters},
                     {"commuter_share", cfg.commuter_share},
                     {"seed", cfg.seed}};
    return ds;
}

}  // namespace diffpoi::evalcli
