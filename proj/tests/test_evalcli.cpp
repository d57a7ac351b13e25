#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <vector>

#include "diffpoi/evalcli/evaluate.hpp"
#include "diffpoi/evalcli/metrics.hpp"
#include "diffpoi/evalcli/synthetic.hpp"
#include "diffpoi/model/model.hpp"

using namespace diffpoi;
using namespace diffpoi::evalcli;

namespace {

ingest::LatLon east_of(ingest::LatLon base, double km) {
    const double dlon = km / (ingest::kEarthRadiusKm * std::cos(base.lat * std::numbers::pi / 180.0)) * 180.0 /
                        std::numbers::pi;
    return {base.lat, base.lon + dlon};
}

// One user walking through `coords` in order.
ingest::CheckinDataset walk(const std::vector<ingest::LatLon>& coords, const std::vector<std::size_t>& path) {
    ingest::CheckinDataset ds;
    for (std::size_t i = 0; i < coords.size(); ++i) ds.pois.push_back({"p" + std::to_string(i), coords[i]});
    ingest::UserHistory u{"u0", {}};
    for (std::size_t i = 0; i < path.size(); ++i) u.visits.push_back({path[i], static_cast<std::int64_t>(i * 3600)});
    ds.users.push_back(u);
    return ds;
}

ingest::CheckinDataset toy_dataset() {
    SyntheticConfig s;
    s.users = 20;
    s.pois = 30;
    s.clusters = 3;
    s.min_visits = 12;
    s.max_visits = 18;
    s.routine_length = 4;
    s.seed = 3;
    return synthetic_dataset(s);
}

model::TrainConfig small_config() {
    model::TrainConfig c;
    c.dim = 8;
    c.score_hidden = 16;
    c.seq_layers = 1;
    c.geo_layers = 1;
    c.step_size = 0.1;
    c.delta_s = 16;
    c.delta_t = 16;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(Metrics, RecallExamples) {
    EXPECT_EQ(recall_at_rank(1, 2), 1.0);
    EXPECT_EQ(recall_at_rank(3, 2), 0.0);
    EXPECT_EQ(recall_at_rank(5, 5), 1.0);
    const std::vector<std::size_t> ranked = {4, 2, 0, 1, 3};
    EXPECT_EQ(recall_at_k(ranked, 4, 2), 1.0);
    EXPECT_EQ(recall_at_k(ranked, 0, 2), 0.0);
    EXPECT_EQ(recall_at_k(ranked, 0, 3), 1.0);
}

TEST(Metrics, NdcgExamples) {
    EXPECT_DOUBLE_EQ(ndcg_at_rank(1, 2), 1.0);
    EXPECT_NEAR(ndcg_at_rank(2, 2), 0.6309297535714575, 1e-15);
    EXPECT_DOUBLE_EQ(ndcg_at_rank(2, 10), 1.0 / std::log2(3.0));
    EXPECT_EQ(ndcg_at_rank(4, 2), 0.0);
    const std::vector<std::size_t> ranked = {3, 1, 0, 2};
    EXPECT_DOUBLE_EQ(ndcg_at_k(ranked, 1, 5), 1.0 / std::log2(3.0));
}

TEST(Metrics, TargetOutsideCatalogRejected) {
    const std::vector<double> scores = {0.1, 0.2};
    EXPECT_THROW(rank_of(scores, 2), std::out_of_range);
    EXPECT_THROW(recall_at_k({0, 1}, 7, 2), std::out_of_range);
    EXPECT_THROW(ndcg_at_k({0, 1}, 7, 2), std::out_of_range);
}

TEST(Metrics, TiesGoToLowerIndex) {
    const std::vector<double> scores = {0.5, 0.9, 0.5, 0.5};
    EXPECT_EQ(rank_of(scores, 1), 1u);
    EXPECT_EQ(rank_of(scores, 0), 2u);
    EXPECT_EQ(rank_of(scores, 2), 3u);
    EXPECT_EQ(rank_of(scores, 3), 4u);
    EXPECT_EQ(ranked_list(scores), (std::vector<std::size_t>{1, 0, 2, 3}));
}

TEST(Metrics, RankOfAgreesWithRankedList) {
    core::Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(40);
        // Coarse values so ties are frequent.
        for (auto& x : s) x = static_cast<double>(rng.index(6));
        const auto order = ranked_list(s);
        for (std::size_t t = 0; t < s.size(); ++t) EXPECT_EQ(rank_of(s, t), position_in(order, t));
    }
}

TEST(Metrics, SumsFollowCutoffs) {
    MetricSums m;
    m.add(1);
    m.add(2);
    m.add(7);
    m.add(40);
    EXPECT_DOUBLE_EQ(m.recall_at(2), 0.5);
    EXPECT_DOUBLE_EQ(m.recall_at(5), 0.5);
    EXPECT_DOUBLE_EQ(m.recall_at(10), 0.75);
    EXPECT_DOUBLE_EQ(m.mean_ndcg(0), (1.0 + 1.0 / std::log2(3.0)) / 4.0);
    EXPECT_DOUBLE_EQ(m.mean_ndcg(2), (1.0 + 1.0 / std::log2(3.0) + 1.0 / std::log2(8.0)) / 4.0);
    EXPECT_THROW(m.recall_at(3), std::out_of_range);
}

TEST(Evaluate, OracleScoresAllOnes) {
    const auto ds = toy_dataset();
    const auto samples = plain_samples(ds, Split::test);
    ASSERT_FALSE(samples.empty());
    const auto r = summarize(samples, ranks_for(samples, oracle_scorer(ds.pois.size())), "oracle", Split::test);
    for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
        EXPECT_EQ(r.overall.mean_recall(i), 1.0);
        EXPECT_EQ(r.overall.mean_ndcg(i), 1.0);
    }
    EXPECT_EQ(r.overall.count, ds.count(Split::test));
}

TEST(Evaluate, RandomScorerMatchesExpectation) {
    const std::size_t num_pois = 100, n = 10000;
    std::vector<model::Sample> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
        samples[i].user = i;
        samples[i].pos = 1;
        samples[i].target = (i * 37) % num_pois;
    }
    const auto r = summarize(samples, ranks_for(samples, random_scorer(num_pois, 99)), "random", Split::test);
    for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
        const double p = static_cast<double>(kCutoffs[i]) / static_cast<double>(num_pois);
        const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n));
        EXPECT_NEAR(r.overall.mean_recall(i), p, 3.0 * sigma) << "K=" << kCutoffs[i];
    }
}

TEST(Evaluate, ReportInvariants) {
    const auto ds = toy_dataset();
    for (const auto& scorer : {popularity_scorer(ds), random_scorer(ds.pois.size(), 1)}) {
        const auto samples = plain_samples(ds, Split::valid);
        const auto r = summarize(samples, ranks_for(samples, scorer), "x", Split::valid);
        for (std::size_t i = 0; i < kCutoffs.size(); ++i) {
            EXPECT_GE(r.overall.mean_ndcg(i), 0.0);
            EXPECT_LE(r.overall.mean_ndcg(i), r.overall.mean_recall(i));
            EXPECT_LE(r.overall.mean_recall(i), 1.0);
            if (i > 0) {
                EXPECT_LE(r.overall.mean_recall(i - 1), r.overall.mean_recall(i));
            }
        }
    }
}

TEST(Evaluate, EmptySplitAndTrainSplitRejected) {
    auto ds = toy_dataset();
    for (auto& u : ds.users) {
        for (auto& v : u.visits) {
            if (v.split == Split::test) v.split = Split::valid;
        }
    }
    const auto samples = plain_samples(ds, Split::test);
    EXPECT_TRUE(samples.empty());
    EXPECT_THROW(summarize(samples, {}, "x", Split::test), DataError);
    model::Model m(small_config(), ds.coordinates());
    EXPECT_THROW(evaluate(m, ds, Split::test), DataError);
    EXPECT_THROW(evaluate(m, ds, Split::train), UsageError);
}

TEST(Evaluate, ModelReportIsDeterministicAndSerializes) {
    const auto ds = toy_dataset();
    model::Model m(small_config(), ds.coordinates());
    const auto groups = group_users_by_mobility(ds);
    auto group_of = [&](std::size_t u) { return groups.bucket[u]; };
    const auto a = to_json(evaluate(m, ds, Split::test, group_of));
    const auto b = to_json(evaluate(m, ds, Split::test, group_of));
    EXPECT_EQ(a.dump(), b.dump());
    EXPECT_EQ(a["schema_version"], kReportSchemaVersion);
    EXPECT_EQ(a["split"], "test");
    EXPECT_EQ(a["seed"], 5);
    EXPECT_EQ(a["config_fingerprint"].get<std::string>().size(), 16u);
    ASSERT_TRUE(a.contains("groups"));
    std::size_t grouped = 0;
    for (const auto& [name, g] : a["groups"].items()) grouped += g["samples"].get<std::size_t>();
    EXPECT_EQ(grouped, a["samples"].get<std::size_t>());
}

TEST(Evaluate, FingerprintTracksConfig) {
    auto c = small_config();
    const auto f1 = fingerprint(model::to_json(c));
    c.lr *= 2.0;
    EXPECT_NE(f1, fingerprint(model::to_json(c)));
    EXPECT_EQ(f1, fingerprint(model::to_json(small_config())));
}

TEST(Trace, FourCheckpointsOfTopRows) {
    const auto ds = toy_dataset();
    model::Model m(small_config(), ds.coordinates());
    const auto samples = m.samples(ds, Split::test);
    ASSERT_FALSE(samples.empty());
    const auto tr = sampling_trace(m, ds, samples.front(), Split::test, 100);
    const std::size_t k = std::min<std::size_t>(100, ds.pois.size());
    ASSERT_EQ(tr.rows.size(), 4 * k);
    ASSERT_EQ(tr.steps.size(), 4u);
    EXPECT_EQ(tr.steps.front(), 0u);
    EXPECT_EQ(tr.steps.back(), static_cast<std::size_t>(std::lround(m.config().horizon / m.config().step_size)));
    for (std::size_t c = 0; c < 4; ++c) {
        std::set<std::size_t> seen;
        for (std::size_t r = 0; r < k; ++r) {
            const auto& row = tr.rows[c * k + r];
            EXPECT_EQ(row.percent, kTracePercents[c]);
            EXPECT_EQ(row.rank, r + 1);
            seen.insert(row.poi);
            EXPECT_DOUBLE_EQ(row.distance_km, ingest::haversine(ds.pois[row.poi].coord, ds.pois[samples.front().target].coord));
            if (r > 0) {
                EXPECT_GE(tr.rows[c * k + r - 1].score, row.score);
            }
        }
        EXPECT_EQ(seen.size(), k);
    }
}

TEST(Trace, StartMatchesPrototypeRanking) {
    const auto ds = toy_dataset();
    model::Model m(small_config(), ds.coordinates());
    const auto s = m.samples(ds, Split::test).at(3);
    const auto tr = sampling_trace(m, ds, s, Split::test, 100);
    const auto tape = m.bind(false);
    const auto p = m.predict_eval(tape, s, Split::test);
    const auto scores = core::matmul(tape.geo, p.prototype);
    const auto order = ranked_list(scores.data());
    for (std::size_t r = 0; r < std::min<std::size_t>(100, ds.pois.size()); ++r) {
        EXPECT_EQ(tr.rows[r].poi, order[r]);
        EXPECT_EQ(tr.rows[r].score, scores[order[r]]);
    }
}

TEST(Trace, CsvAndManifest) {
    const auto ds = toy_dataset();
    model::Model m(small_config(), ds.coordinates());
    const auto s = m.samples(ds, Split::test).front();
    const auto tr = sampling_trace(m, ds, s, Split::test, 10);
    std::ostringstream out;
    write_trace_csv(out, tr);
    std::istringstream in(out.str());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 1 + 4 * 10u);
    const auto j = trace_manifest(tr, "trace.csv");
    EXPECT_EQ(j["rows_per_checkpoint"], 10);
    EXPECT_EQ(j["schema_version"], kReportSchemaVersion);
    EXPECT_DOUBLE_EQ(j["mean_distance_km"]["0"].get<double>(), tr.mean_distance(0));
}

TEST(Trace, RequiresGeographicalTerm) {
    const auto ds = toy_dataset();
    auto c = small_config();
    c.wo_location = true;
    model::Model m(c, ds.coordinates());
    const auto s = m.samples(ds, Split::test).front();
    EXPECT_THROW(sampling_trace(m, ds, s, Split::test), UsageError);
}

TEST(Groups, MeanOfSuccessiveDistances) {
    const ingest::LatLon o{40.0, -74.0};
    // Hops of 2 km then 4 km along a parallel; haversine differs from the
    // planar sum by far less than the tolerance.
    const auto ds = walk({o, east_of(o, 2.0), east_of(o, 6.0)}, {0, 1, 2});
    const auto g = group_users_by_mobility(ds);
    EXPECT_NEAR(g.mean_km[0], 3.0, 1e-3);
    EXPECT_EQ(g.bucket[0], "<5");
}

TEST(Groups, SinglePoiRevisitorHasZeroMobility) {
    const auto ds = walk({{40.0, -74.0}}, {0, 0, 0, 0});
    const auto g = group_users_by_mobility(ds);
    EXPECT_EQ(g.mean_km[0], 0.0);
    EXPECT_EQ(g.bucket[0], "<5");
}

TEST(Groups, BoundaryIsLeftClosed) {
    const std::vector<double> b = {5, 10, 15};
    EXPECT_EQ(mobility_bucket(5.0, b), "[5,10)");
    EXPECT_EQ(mobility_bucket(4.999, b), "<5");
    EXPECT_EQ(mobility_bucket(10.0, b), "[10,15)");
    EXPECT_EQ(mobility_bucket(15.0, b), ">=15");
    EXPECT_EQ(mobility_bucket(std::nan(""), b), kSingletonBucket);
    EXPECT_EQ(bucket_labels(b), (std::vector<std::string>{"<5", "[5,10)", "[10,15)", ">=15"}));
}

TEST(Groups, SingleVisitGoesToSingletonBucket) {
    const auto ds = walk({{40.0, -74.0}}, {0});
    const auto g = group_users_by_mobility(ds);
    EXPECT_TRUE(std::isnan(g.mean_km[0]));
    EXPECT_EQ(g.bucket[0], kSingletonBucket);
    const auto j = to_json(g, ds);
    EXPECT_EQ(j["counts"][kSingletonBucket], 1);
    EXPECT_TRUE(j["users"][0]["mean_km"].is_null());
}

TEST(Groups, BadBoundariesRejected) {
    const auto ds = walk({{40.0, -74.0}}, {0, 0});
    EXPECT_THROW(group_users_by_mobility(ds, {10, 5}), UsageError);
    EXPECT_THROW(group_users_by_mobility(ds, {5, 5}), UsageError);
    EXPECT_THROW(group_users_by_mobility(ds, {-1}), UsageError);
}

TEST(Synthetic, ShapeAndDeterminism) {
    SyntheticConfig cfg;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        EXPECT_EQ(a.records[i].user_id, b.records[i].user_id);
        EXPECT_EQ(a.records[i].poi_id, b.records[i].poi_id);
        EXPECT_EQ(a.records[i].timestamp, b.records[i].timestamp);
    }
    EXPECT_EQ(a.poi_cluster.size(), cfg.pois);
    EXPECT_EQ(a.commuter.size(), cfg.users);
    const auto commuters = std::count(a.commuter.begin(), a.commuter.end(), true);
    EXPECT_GT(commuters, 60);
    EXPECT_LT(commuters, 140);
}

TEST(Synthetic, ClustersAreTightAndSeparated) {
    SyntheticConfig cfg;
    const auto data = generate_synthetic(cfg);
    std::map<std::string, ingest::LatLon> where;
    for (const auto& r : data.records) where[r.poi_id] = {r.latitude, r.longitude};
    std::vector<std::pair<std::size_t, ingest::LatLon>> pts;
    for (const auto& [id, c] : where) pts.push_back({data.poi_cluster[std::stoul(id.substr(1))], c});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double d = ingest::haversine(pts[i].second, pts[j].second);
            if (pts[i].first == pts[j].first) {
                EXPECT_LE(d, 2.0 * cfg.cluster_radius_km + 1e-9);
            } else {
                EXPECT_GT(d, 5.0);
            }
        }
    }
}

TEST(Synthetic, DatasetSurvivesFiltering) {
    const auto ds = synthetic_dataset({});
    EXPECT_EQ(ds.users.size(), 200u);
    EXPECT_GT(ds.pois.size(), 250u);
    EXPECT_LE(ds.pois.size(), 300u);
    EXPECT_GT(ds.count(Split::test), 0u);
    EXPECT_EQ(ds.provenance["source"], "synthetic");
    EXPECT_THROW(generate_synthetic({.clusters = 0}), UsageError);
}
