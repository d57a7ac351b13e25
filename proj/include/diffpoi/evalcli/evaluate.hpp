#pragma once

// Evaluation protocol, reports, baselines, sampling traces and mobility groups.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffpoi/core/error.hpp"
#include "diffpoi/core/random.hpp"
#include "diffpoi/evalcli/metrics.hpp"
#include "diffpoi/ingest/dataset.hpp"
#include "diffpoi/ingest/geo.hpp"
#include "diffpoi/model/model.hpp"

namespace diffpoi::evalcli {

inline constexpr int kReportSchemaVersion = 1;

using ingest::CheckinDataset;
using ingest::Split;

struct MetricsReport {
    std::string scorer;
    std::string split;
    MetricSums overall;
    std::map<std::string, MetricSums> groups;  // optional mobility breakdown
    std::uint64_t seed = 0;
    std::string config_fingerprint;
};

inline nlohmann::json metrics_json(const MetricSums& m) {
    nlohmann::json j;
    for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
        j["recall@" + std::to_string(kCutoffs[i])] = m.mean_recall(i);
        j["ndcg@" + std::to_string(kCutoffs[i])] = m.mean_ndcg(i);
    }
    j["samples"] = m.count;
    return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j = {{"schema_version", kReportSchemaVersion},
                        {"scorer", r.scorer},
                        {"split", r.split},
                        {"seed", r.seed},
                        {"config_fingerprint", r.config_fingerprint},
                        {"samples", r.overall.count},
                        {"metrics", metrics_json(r.overall)}};
    if (!r.groups.empty()) {
        nlohmann::json g = nlohmann::json::object();
        for (const auto& [name, m] : r.groups) g[name] = metrics_json(m);
        j["groups"] = g;
    }
    return j;
}

// FNV-1a over the canonical config dump.
inline std::string fingerprint(const nlohmann::json& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << h;
    return out.str();
}

// Scores the full catalog for one evaluation sample.
using Scorer = std::function<std::vector<double>(const model::Sample&)>;

// Eval samples without model-specific preparation; for the baselines.
inline std::vector<model::Sample> plain_samples(const CheckinDataset& ds, Split split) {
    std::vector<model::Sample> out;
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        const auto& visits = ds.users[u].visits;
        for (std::size_t p = 1; p < visits.size(); ++p) {
            if (visits[p].split != split) continue;
            model::Sample s;
            s.user = u;
            s.pos = p;
            s.target = visits[p].poi;
            for (std::size_t i = 0; i < p; ++i) s.history.push_back(visits[i].poi);
            out.push_back(std::move(s));
        }
    }
    return out;
}

inline std::vector<std::size_t> ranks_for(const std::vector<model::Sample>& samples, const Scorer& scorer) {
    std::vector<std::size_t> ranks;
    ranks.reserve(samples.size());
    for (const auto& s : samples) {
        const auto scores = scorer(s);
        ranks.push_back(rank_of(scores, s.target));
    }
    return ranks;
}

// Mean ranks into a report; `group_of` (optional) maps a user to its bucket.
inline MetricsReport summarize(const std::vector<model::Sample>& samples, const std::vector<std::size_t>& ranks,
                               const std::string& scorer, Split split,
                               const std::function<std::string(std::size_t)>& group_of = {}) {
    if (samples.empty()) throw DataError("evaluate: split " + std::string(ingest::split_name(split)) + " is empty");
    MetricsReport r;
    r.scorer = scorer;
    r.split = std::string(ingest::split_name(split));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        r.overall.add(ranks[i]);
        if (group_of) r.groups[group_of(samples[i].user)].add(ranks[i]);
    }
    return r;
}

inline MetricsReport evaluate(const model::Model& m, const CheckinDataset& ds, Split split,
                              const std::function<std::string(std::size_t)>& group_of = {}) {
    if (split == Split::train) throw UsageError("evaluate: split must be valid or test");
    const auto samples = m.samples(ds, split);
    if (samples.empty()) throw DataError("evaluate: split " + std::string(ingest::split_name(split)) + " is empty");
    auto r = summarize(samples, m.ranks(samples, split), "diffpoi", split, group_of);
    r.seed = m.config().seed;
    r.config_fingerprint = fingerprint(model::to_json(m.config()));
    return r;
}

// Train-split visit counts per POI.
inline Scorer popularity_scorer(const CheckinDataset& ds) {
    std::vector<double> counts(ds.pois.size(), 0.0);
    for (const auto& u : ds.users) {
        for (const auto& v : u.visits) {
            if (v.split == Split::train) counts[v.poi] += 1.0;
        }
    }
    return [counts](const model::Sample&) { return counts; };
}

inline Scorer random_scorer(std::size_t num_pois, std::uint64_t seed) {
    return [num_pois, seed](const model::Sample& s) {
        core::Rng rng(core::derive_seed(seed, {s.user, s.pos}));
        std::vector<double> scores(num_pois);
        for (auto& x : scores) x = rng.uniform();
        return scores;
    };
}

inline Scorer oracle_scorer(std::size_t num_pois) {
    return [num_pois](const model::Sample& s) {
        std::vector<double> scores(num_pois, 0.0);
        scores.at(s.target) = 1.0;
        return scores;
    };
}

// ---------------------------------------------------------------------------
// Sampling trace
// ---------------------------------------------------------------------------

inline constexpr std::array<int, 4> kTracePercents = {0, 33, 67, 100};

struct TraceRow {
    int percent = 0;
    std::size_t rank = 0;
    std::size_t poi = 0;
    std::string poi_id;
    double latitude = 0.0;
    double longitude = 0.0;
    double distance_km = 0.0;
    double score = 0.0;
};

struct SamplingTrace {
    std::string user_id;
    std::size_t user = 0;
    std::size_t target = 0;
    std::string target_id;
    std::vector<std::size_t> steps;  // sampler step index per checkpoint
    std::vector<TraceRow> rows;

    double mean_distance(int percent) const {
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& r : rows) {
            if (r.percent == percent) {
                sum += r.distance_km;
                ++n;
            }
        }
        if (n == 0) throw std::out_of_range("trace: no rows for checkpoint");
        return sum / static_cast<double>(n);
    }
};

// Ranks POIs by <e_i^g, v> at 0/33/67/100% of the reverse trajectory for the
// given evaluation sample and records the top `top_k` with their distance to
// the target.
inline SamplingTrace sampling_trace(const model::Model& m, const CheckinDataset& ds, const model::Sample& s,
                                    Split split, std::size_t top_k = 100) {
    if (!m.config().uses_geo()) throw UsageError("trace: the model has no geographical term");
    const auto tape = m.bind(false);
    std::vector<std::vector<double>> states;
    m.predict_eval(tape, s, split, &states);
    const std::size_t last = states.size() - 1;
    SamplingTrace tr;
    tr.user = s.user;
    tr.user_id = ds.users.at(s.user).id;
    tr.target = s.target;
    tr.target_id = ds.pois.at(s.target).id;
    const auto target = ds.pois.at(s.target).coord;
    const std::size_t k = std::min(top_k, m.num_pois());
    for (int pct : kTracePercents) {
        const auto step = static_cast<std::size_t>(std::lround(static_cast<double>(last) * pct / 100.0));
        tr.steps.push_back(step);
        const auto scores = core::matmul(tape.geo, core::Tensor::vector(states[step]));
        const auto order = ranked_list(scores.data());
        for (std::size_t r = 0; r < k; ++r) {
            const auto& poi = ds.pois[order[r]];
            tr.rows.push_back({pct, r + 1, order[r], poi.id, poi.coord.lat, poi.coord.lon,
                               ingest::haversine(poi.coord, target), scores[order[r]]});
        }
    }
    return tr;
}

inline void write_trace_csv(std::ostream& out, const SamplingTrace& tr) {
    out << "user_id,target_poi,checkpoint_percent,sampler_step,rank,poi_id,latitude,longitude,distance_km,score\n";
    out << std::setprecision(17);
    for (const auto& r : tr.rows) {
        const auto idx = static_cast<std::size_t>(std::find(kTracePercents.begin(), kTracePercents.end(), r.percent) -
                                                  kTracePercents.begin());
        out << tr.user_id << ',' << tr.target_id << ',' << r.percent << ',' << tr.steps[idx] << ',' << r.rank << ','
            << r.poi_id << ',' << r.latitude << ',' << r.longitude << ',' << r.distance_km << ',' << r.score << '\n';
    }
}

inline nlohmann::json trace_manifest(const SamplingTrace& tr, const std::string& csv_name) {
    nlohmann::json mean = nlohmann::json::object();
    for (int pct : kTracePercents) mean[std::to_string(pct)] = tr.mean_distance(pct);
    return {{"schema_version", kReportSchemaVersion},
            {"user_id", tr.user_id},
            {"target_poi", tr.target_id},
            {"checkpoints", kTracePercents},
            {"sampler_steps", tr.steps},
            {"rows_per_checkpoint", tr.rows.size() / kTracePercents.size()},
            {"mean_distance_km", mean},
            {"table", csv_name}};
}

// ---------------------------------------------------------------------------
// Mobility groups
// ---------------------------------------------------------------------------

// Mean haversine distance between successive visits; NaN with fewer than two.
inline double mean_successive_distance(const CheckinDataset& ds, std::size_t user) {
    const auto& v = ds.users.at(user).visits;
    if (v.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) sum += ingest::haversine(ds.pois[v[i - 1].poi].coord, ds.pois[v[i].poi].coord);
    return sum / static_cast<double>(v.size() - 1);
}

inline std::vector<std::string> bucket_labels(const std::vector<double>& bounds) {
    auto fmt = [](double x) {
        std::ostringstream s;
        s << x;
        return s.str();
    };
    std::vector<std::string> out;
    if (bounds.empty()) return {"all"};
    out.push_back("<" + fmt(bounds.front()));
    for (std::size_t i = 1; i < bounds.size(); ++i) out.push_back("[" + fmt(bounds[i - 1]) + "," + fmt(bounds[i]) + ")");
    out.push_back(">=" + fmt(bounds.back()));
    return out;
}

inline constexpr const char* kSingletonBucket = "singleton";

// Left-closed buckets: [b_{i-1}, b_i). Users with one visit go to "singleton".
inline std::string mobility_bucket(double mean_km, const std::vector<double>& bounds) {
    if (std::isnan(mean_km)) return kSingletonBucket;
    const auto labels = bucket_labels(bounds);
    const auto idx = static_cast<std::size_t>(std::upper_bound(bounds.begin(), bounds.end(), mean_km) - bounds.begin());
    return labels[idx];
}

struct MobilityGroups {
    std::vector<double> boundaries;
    std::vector<double> mean_km;       // per user
    std::vector<std::string> bucket;   // per user
};

inline MobilityGroups group_users_by_mobility(const CheckinDataset& ds, std::vector<double> boundaries = {5, 10, 15}) {
    for (std::size_t i = 0; i < boundaries.size(); ++i) {
        if (!std::isfinite(boundaries[i]) || boundaries[i] < 0.0 || (i > 0 && boundaries[i] <= boundaries[i - 1])) {
            throw UsageError("groups: boundaries must be finite, nonnegative and strictly increasing");
        }
    }
    MobilityGroups g;
    g.boundaries = boundaries;
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        g.mean_km.push_back(mean_successive_distance(ds, u));
        g.bucket.push_back(mobility_bucket(g.mean_km.back(), boundaries));
    }
    return g;
}

inline nlohmann::json to_json(const MobilityGroups& g, const CheckinDataset& ds) {
    std::map<std::string, std::size_t> counts;
    for (const auto& label : bucket_labels(g.boundaries)) counts[label] = 0;
    counts[kSingletonBucket] = 0;
    nlohmann::json users = nlohmann::json::array();
    for (std::size_t u = 0; u < g.bucket.size(); ++u) {
        ++counts[g.bucket[u]];
        users.push_back({{"user_id", ds.users[u].id},
                         {"mean_km", std::isnan(g.mean_km[u]) ? nlohmann::json(nullptr) : nlohmann::json(g.mean_km[u])},
                         {"bucket", g.bucket[u]}});
    }
    return {{"schema_version", kReportSchemaVersion},
            {"boundaries_km", g.boundaries},
            {"buckets", bucket_labels(g.boundaries)},
            {"counts", counts},
            {"users", users}};
}

}  // namespace diffpoi::evalcli
