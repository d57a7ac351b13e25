#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "diffpoi/core/grad_check.hpp"
#include "diffpoi/seqenc/encoder.hpp"

using namespace diffpoi;
using namespace diffpoi::core;
using namespace diffpoi::seqenc;

namespace {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

// Plain-double reference arithmetic, independent of the tape.
Vec row_times(const Vec& x, const Mat& w) {
    Vec y(w[0].size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w[i][j];
    }
    return y;
}
double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }
Vec axpy(double a, const Vec& x, const Vec& y) {
    Vec out(y);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] += a * x[i];
    return out;
}
double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct RefFfn {
    Mat w1, w2;
    Vec b1, b2;
    Vec operator()(const Vec& x) const {
        Vec h = row_times(x, w1);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = ref_gelu(h[i] + b1[i]);
        Vec y = row_times(h, w2);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += b2[i];
        return y;
    }
};

Mat random_mat(std::size_t r, std::size_t c, Rng& rng) {
    Mat m(r, Vec(c));
    for (auto& row : m) {
        for (auto& v : row) v = 0.5 * rng.normal();
    }
    return m;
}
Vec random_vec(std::size_t n, Rng& rng) {
    Vec v(n);
    for (auto& x : v) x = 0.5 * rng.normal();
    return v;
}
Tensor to_tensor(const Mat& m) {
    Vec flat;
    for (const auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::matrix(m.size(), m[0].size(), flat);
}
FeedForward to_ffn(const RefFfn& f) {
    return {to_tensor(f.w1), Tensor::vector(f.b1), to_tensor(f.w2), Tensor::vector(f.b2)};
}

Tensor random_tensor(Shape shape, Rng& rng, double sd = 0.5) {
    Vec v(numel(shape));
    for (auto& x : v) x = sd * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    Rng rng(seed);
    return sum(multiply(y, random_tensor(y.shape(), rng, 1.0)));
}

ingest::Sequence line_sequence(const std::vector<std::size_t>& pois) {
    ingest::Sequence s;
    for (std::size_t i = 0; i < pois.size(); ++i) {
        s.push_back({pois[i], {40.0 + 0.01 * static_cast<double>(pois[i]), -74.0 + 0.003 * static_cast<double>(pois[i] * pois[i])},
                     static_cast<std::int64_t>(600 * i * i + 60 * i)});
    }
    return s;
}

}  // namespace

TEST(EmbedIntervals, GatherSemantics) {
    Rng rng(1);
    Tensor es = random_tensor({6, 3}, rng), et = random_tensor({6, 3}, rng);
    ingest::EdgeIntervals idx{{0, 2, 2}, {5, 0, 1}};
    auto iv = embed_intervals(idx, es, et);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(iv.spatial.at(0, c), es.at(0, c));
        EXPECT_EQ(iv.spatial.at(1, c), iv.spatial.at(2, c));
        EXPECT_EQ(iv.temporal.at(1, c), et.at(0, c));
    }
    EXPECT_THROW(embed_intervals({{6}, {0}}, es, et), std::out_of_range);
}

TEST(EmbedIntervals, GradientTouchesOnlyGatheredRows) {
    Rng rng(2);
    const std::size_t d = 4, delta = 8;
    auto seq = line_sequence({0, 1, 2, 1, 3});
    Config cfg{d, 2, delta, delta, Variant::full, 4};
    auto in = prepare(seq, cfg);
    ParameterStore store;
    declare(store, cfg, rng);
    Tensor table = random_tensor({4, d}, rng);
    auto b = store.bind(true);
    auto enc = Encoder::bind(b, cfg);
    backward(weighted_sum(enc.encode(table, in, {}), 3));
    const auto g = b["seq.Es"].grad();
    std::vector<bool> used(delta, false);
    for (auto s : in.intervals.spatial) used[s] = true;
    for (std::size_t r = 0; r < delta; ++r) {
        double mag = 0.0;
        for (std::size_t c = 0; c < d; ++c) mag += std::abs(g[r * d + c]);
        if (used[r]) {
            EXPECT_GT(mag, 0.0) << "row " << r;
        } else {
            EXPECT_EQ(mag, 0.0) << "row " << r;
        }
    }
    auto check = grad_check(
        [&](const Tensor& x) {
            auto e = Encoder::bind(store.bind(false), cfg);
            e.es = x;
            return weighted_sum(e.encode(table, in, {}), 3);
        },
        Tensor(b["seq.Es"].shape(), b["seq.Es"].to_vector()));
    EXPECT_LT(check.max_relative_error, 1e-4);
}

TEST(MessageLayer, SingleInNeighbourAndIsolatedNode) {
    Rng rng(4);
    const std::size_t d = 3;
    // A -> B: B has one in-neighbour (A) and no out-neighbour.
    auto g = ingest::build_transition_graph(std::vector<std::size_t>{10, 11});
    auto inc = incidence(g);
    Tensor h = random_tensor({2, d}, rng);
    IntervalEmbeddings iv{random_tensor({1, d}, rng), random_tensor({1, d}, rng)};
    Tensor alpha;
    auto out = message_layer(h, inc, iv, random_tensor({d}, rng), random_tensor({d}, rng), &alpha);
    for (auto a : alpha.data()) EXPECT_DOUBLE_EQ(a, 1.0);
    for (std::size_t c = 0; c < d; ++c) {
        EXPECT_NEAR(out.at(1, c), h.at(1, c) + h.at(0, c), 1e-15);
        EXPECT_NEAR(out.at(0, c), h.at(0, c) + h.at(1, c), 1e-15);
    }

    auto single = incidence(ingest::build_transition_graph(std::vector<std::size_t>{3}));
    Tensor h1 = random_tensor({1, d}, rng);
    auto same = message_layer(h1, single, {}, random_tensor({d}, rng), random_tensor({d}, rng));
    EXPECT_EQ(same.to_vector(), h1.to_vector());
}

TEST(MessageLayer, PathMiddleNodeByHand) {
    // A -> B -> C with hand-set values; B sees A as in-neighbour and C as out-neighbour.
    const Vec hA{1.0, 0.0, 2.0}, hB{0.5, -1.0, 1.0}, hC{-1.0, 2.0, 0.0};
    const Vec sAB{0.1, 0.2, 0.3}, tAB{0.0, -0.1, 0.2}, sBC{-0.2, 0.0, 0.1}, tBC{0.3, 0.3, -0.3};
    const Vec phi_in{1.0, -0.5, 0.25}, phi_out{0.2, 0.4, -1.0};
    auto g = ingest::build_transition_graph(std::vector<std::size_t>{0, 1, 2});
    auto inc = incidence(g);
    Tensor h = to_tensor({hA, hB, hC});
    IntervalEmbeddings iv{to_tensor({sAB, sBC}), to_tensor({tAB, tBC})};
    auto out = message_layer(h, inc, iv, Tensor::vector(phi_in), Tensor::vector(phi_out));

    auto affinity = [](const Vec& a, const Vec& b, const Vec& s, const Vec& t) {
        Vec z(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) z[i] = a[i] * b[i] + s[i] + t[i];
        return z;
    };
    const double a_in = dot(phi_in, affinity(hB, hA, sAB, tAB));
    const double a_out = dot(phi_out, affinity(hB, hC, sBC, tBC));
    const double w_in = std::exp(a_in) / (std::exp(a_in) + std::exp(a_out));
    const double w_out = 1.0 - w_in;
    const Vec expected = axpy(w_out, hC, axpy(w_in, hA, hB));
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(1, c), expected[c], 1e-12);
}

TEST(MessageLayer, WeightsNormalizePerNode) {
    Rng rng(6);
    const std::size_t d = 5;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::size_t> seq(3 + rng.index(15));
        for (auto& p : seq) p = rng.index(6);
        auto g = ingest::build_transition_graph(seq);
        if (g.edges.empty()) continue;
        auto inc = incidence(g);
        Tensor h = random_tensor({g.node_count(), d}, rng);
        IntervalEmbeddings iv{random_tensor({g.edges.size(), d}, rng), random_tensor({g.edges.size(), d}, rng)};
        Tensor alpha;
        message_layer(h, inc, iv, random_tensor({d}, rng), random_tensor({d}, rng), &alpha);
        std::vector<double> total(g.node_count(), 0.0);
        const auto centers = inc.centers();
        for (std::size_t i = 0; i < centers.size(); ++i) {
            EXPECT_GT(alpha[i], 0.0);
            total[centers[i]] += alpha[i];
        }
        for (std::size_t v = 0; v < total.size(); ++v) {
            if (std::count(centers.begin(), centers.end(), v) > 0) {
                EXPECT_NEAR(total[v], 1.0, 1e-9);
            }
        }
    }
}

TEST(MessageLayer, ZeroIntervalsGiveAffinityOnlyAttention) {
    Rng rng(8);
    const std::size_t d = 4;
    auto g = ingest::build_transition_graph(std::vector<std::size_t>{0, 1, 2, 0});
    auto inc = incidence(g);
    Tensor h = random_tensor({3, d}, rng);
    Tensor phi = random_tensor({d}, rng);
    IntervalEmbeddings zero{Tensor::zeros({g.edges.size(), d}), Tensor::zeros({g.edges.size(), d})};
    Tensor alpha;
    message_layer(h, inc, zero, phi, phi, &alpha);
    const auto c = inc.centers(), n = inc.neighbors();
    std::vector<double> z(g.node_count(), 0.0);
    std::vector<double> logits(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
        double l = 0.0;
        for (std::size_t k = 0; k < d; ++k) l += phi[k] * h.at(c[i], k) * h.at(n[i], k);
        logits[i] = std::exp(l);
        z[c[i]] += logits[i];
    }
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(alpha[i], logits[i] / z[c[i]], 1e-12);
}

TEST(Readout, SingleRow) {
    Rng rng(10);
    const std::size_t d = 3;
    RefFfn f{random_mat(d, d, rng), random_mat(d, d, rng), random_vec(d, rng), random_vec(d, rng)};
    Mat wq = random_mat(d, d, rng), wk = random_mat(d, d, rng), wv = random_mat(d, d, rng);
    Vec e = random_vec(d, rng);
    Tensor weights;
    auto x = readout_user(to_tensor({e}), to_tensor(wq), to_tensor(wk), to_tensor(wv), to_ffn(f), {}, &weights);
    EXPECT_DOUBLE_EQ(weights[0], 1.0);
    Vec v = row_times(e, wv);
    Vec expected = f(axpy(1.0, v, v));
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(x[c], expected[c], 1e-12);
}

TEST(Readout, TwoOrthogonalRowsByHand) {
    const std::size_t d = 2;
    RefFfn f{{{1.0, 0.5}, {-0.5, 1.0}}, {{0.3, 0.0}, {0.2, -0.7}}, {0.1, -0.1}, {0.0, 0.05}};
    Mat wq{{1.0, 0.0}, {0.0, 2.0}}, wk{{0.5, 0.5}, {0.0, 1.0}}, wv{{2.0, -1.0}, {1.0, 1.0}};
    Vec e1{1.0, 0.0}, e2{0.0, 1.0};
    auto x = readout_user(to_tensor({e1, e2}), to_tensor(wq), to_tensor(wk), to_tensor(wv), to_ffn(f), {});

    Mat q{row_times(e1, wq), row_times(e2, wq)}, k{row_times(e1, wk), row_times(e2, wk)},
        v{row_times(e1, wv), row_times(e2, wv)};
    Vec mean(d, 0.0);
    for (std::size_t i = 0; i < 2; ++i) {
        const double s0 = dot(q[i], k[0]) / std::sqrt(2.0), s1 = dot(q[i], k[1]) / std::sqrt(2.0);
        const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
        Vec ctx = axpy(a0, v[0], axpy(1.0 - a0, v[1], Vec(d, 0.0)));
        Vec row = f(axpy(1.0, ctx, v[i]));
        mean = axpy(0.5, row, mean);
    }
    for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(x[c], mean[c], 1e-12);
}

TEST(Readout, PermutationInvariant) {
    Rng rng(12);
    const std::size_t d = 4, n = 6;
    RefFfn f{random_mat(d, d, rng), random_mat(d, d, rng), random_vec(d, rng), random_vec(d, rng)};
    Tensor wq = to_tensor(random_mat(d, d, rng)), wk = to_tensor(random_mat(d, d, rng)),
           wv = to_tensor(random_mat(d, d, rng));
    Mat rows = random_mat(n, d, rng);
    auto base = readout_user(to_tensor(rows), wq, wk, wv, to_ffn(f), {});
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        Mat shuffled;
        for (auto p : perm) shuffled.push_back(rows[p]);
        auto x = readout_user(to_tensor(shuffled), wq, wk, wv, to_ffn(f), {});
        for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(x[c], base[c], 1e-9);
    }
}

TEST(Encoder, GradientsOnFourNodeGraph) {
    Rng rng(14);
    const std::size_t d = 4, delta = 8;
    Config cfg{d, 2, delta, delta, Variant::full, 4};
    auto in = prepare(line_sequence({0, 1, 2, 3, 1, 2, 0}), cfg);
    ASSERT_EQ(in.graph.node_count(), 4u);
    ParameterStore store;
    declare(store, cfg, rng);
    Tensor table = random_tensor({5, d}, rng);

    const std::vector<std::string> names{"seq.Es",       "seq.Et",      "seq.phi_in.0", "seq.phi_out.0",
                                         "seq.phi_in.1", "seq.phi_out.1", "seq.WQ",     "seq.WK",
                                         "seq.WV",       "seq.ffn.w1",  "seq.ffn.b2"};
    for (const auto& name : names) {
        const auto& p = store.get(name);
        auto check = grad_check(
            [&](const Tensor& x) {
                auto e = Encoder::bind(store.bind(false), cfg);
                if (name == "seq.Es") e.es = x;
                if (name == "seq.Et") e.et = x;
                if (name == "seq.phi_in.0") e.phi_in[0] = x;
                if (name == "seq.phi_out.0") e.phi_out[0] = x;
                if (name == "seq.phi_in.1") e.phi_in[1] = x;
                if (name == "seq.phi_out.1") e.phi_out[1] = x;
                if (name == "seq.WQ") e.wq = x;
                if (name == "seq.WK") e.wk = x;
                if (name == "seq.WV") e.wv = x;
                if (name == "seq.ffn.w1") e.ffn.w1 = x;
                if (name == "seq.ffn.b2") e.ffn.b2 = x;
                return weighted_sum(e.encode(table, in, {}), 21);
            },
            Tensor(p.shape, *p.value));
        EXPECT_TRUE(check.finite) << name;
        EXPECT_LT(check.max_relative_error, 1e-4) << name;
    }
    auto base = grad_check(
        [&](const Tensor& x) {
            auto e = Encoder::bind(store.bind(false), cfg);
            return weighted_sum(e.encode(x, in, {}), 21);
        },
        table);
    EXPECT_LT(base.max_relative_error, 1e-4);
}

TEST(Encoder, VariantGradientsAndMean) {
    Rng rng(16);
    const std::size_t d = 4, delta = 8;
    auto seq = line_sequence({0, 1, 2, 3, 1});
    Tensor table = random_tensor({4, d}, rng);
    for (Variant v : {Variant::gcn, Variant::disen_stub, Variant::att}) {
        Config cfg{d, 2, delta, delta, v, 2};
        ParameterStore store;
        declare(store, cfg, rng);
        auto in = prepare(seq, cfg);
        auto check = grad_check(
            [&](const Tensor& x) { return weighted_sum(Encoder::bind(store.bind(false), cfg).encode(x, in, {}), 5); },
            table);
        EXPECT_LT(check.max_relative_error, 1e-4) << variant_name(v);
    }
    Config cfg{d, 2, delta, delta, Variant::mean, 4};
    ParameterStore store;
    declare(store, cfg, rng);
    auto x = Encoder::bind(store.bind(false), cfg).encode(table, prepare(seq, cfg), {});
    for (std::size_t c = 0; c < d; ++c) {
        const double mean = (table.at(0, c) + table.at(1, c) + table.at(2, c) + table.at(3, c)) / 4.0;
        EXPECT_NEAR(x[c], mean, 1e-12);
    }
}

TEST(Encoder, DropoutOnlyWhenTraining) {
    Rng rng(18);
    const std::size_t d = 4;
    Config cfg{d, 2, 8, 8, Variant::full, 4};
    ParameterStore store;
    declare(store, cfg, rng);
    auto in = prepare(line_sequence({0, 1, 2}), cfg);
    Tensor table = random_tensor({3, d}, rng);
    auto enc = Encoder::bind(store.bind(false), cfg);
    Rng drop(1);
    auto eval1 = enc.encode(table, in, {false, 0.2, &drop});
    auto eval2 = enc.encode(table, in, {});
    EXPECT_EQ(eval1.to_vector(), eval2.to_vector());
    auto train = enc.encode(table, in, {true, 0.5, &drop});
    EXPECT_NE(train.to_vector(), eval2.to_vector());
}

TEST(Encoder, DeclaresOnlyVariantParameters) {
    Rng rng(19);
    auto names_for = [&](Variant v) {
        ParameterStore store;
        declare(store, Config{4, 2, 8, 8, v, 2}, rng);
        std::vector<std::string> names;
        for (const auto& p : store.all()) names.push_back(p.name);
        return names;
    };
    auto has = [](const std::vector<std::string>& names, const std::string& n) {
        return std::find(names.begin(), names.end(), n) != names.end();
    };
    const auto full = names_for(Variant::full);
    EXPECT_TRUE(has(full, "seq.Es") && has(full, "seq.phi_in.1") && has(full, "seq.WQ"));
    EXPECT_FALSE(has(full, "seq.gcn_W.0"));
    const auto gcn = names_for(Variant::gcn);
    EXPECT_TRUE(has(gcn, "seq.gcn_W.1") && has(gcn, "seq.ffn.w1"));
    EXPECT_FALSE(has(gcn, "seq.Es") || has(gcn, "seq.phi_in.0"));
    const auto att = names_for(Variant::att);
    EXPECT_EQ(att.size(), 7u);
    EXPECT_TRUE(names_for(Variant::mean).empty());
}
