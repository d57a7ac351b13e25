#pragma once

// Prediction head, losses and the training loop.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffpoi/core/adam.hpp"
#include "diffpoi/core/error.hpp"
#include "diffpoi/core/nn.hpp"
#include "diffpoi/core/parameters.hpp"
#include "diffpoi/core/random.hpp"
#include "diffpoi/diffusion/score_net.hpp"
#include "diffpoi/diffusion/sde.hpp"
#include "diffpoi/evalcli/metrics.hpp"
#include "diffpoi/geoenc/encoder.hpp"
#include "diffpoi/ingest/dataset.hpp"
#include "diffpoi/ingest/geo.hpp"
#include "diffpoi/ingest/sequence.hpp"
#include "diffpoi/model/config.hpp"
#include "diffpoi/seqenc/encoder.hpp"

namespace diffpoi::model {

using core::Tensor;
using ingest::CheckinDataset;
using ingest::Split;

// Stream tags for derive_seed.
enum class Stream : std::uint64_t { init = 1, shuffle, dropout, sampler, fisher, eval_sampler };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream s, std::initializer_list<std::uint64_t> parts) {
    std::vector<std::uint64_t> all{static_cast<std::uint64_t>(s)};
    all.insert(all.end(), parts.begin(), parts.end());
    std::uint64_t out = core::derive_seed(seed, {all[0]});
    for (std::size_t i = 1; i < all.size(); ++i) out = core::derive_seed(out, {all[i]});
    return out;
}

// One next-POI example: the visit at `pos` given the visits before it.
struct Sample {
    std::size_t user = 0;
    std::size_t pos = 0;
    std::size_t target = 0;
    std::vector<std::size_t> history;  // POI per visit, oldest first
    seqenc::SequenceInput input;
};

inline Sample make_sample(const CheckinDataset& ds, std::size_t user, std::size_t pos, std::size_t max_seq,
                          const seqenc::Config& seq_cfg) {
    const auto& visits = ds.users.at(user).visits;
    if (pos == 0 || pos >= visits.size()) throw DataError("sample: visit has no history");
    const std::size_t begin = pos > max_seq ? pos - max_seq : 0;
    ingest::Sequence seq;
    Sample s;
    s.user = user;
    s.pos = pos;
    s.target = visits[pos].poi;
    for (std::size_t i = begin; i < pos; ++i) {
        seq.push_back({visits[i].poi, ds.pois.at(visits[i].poi).coord, visits[i].timestamp});
        s.history.push_back(visits[i].poi);
    }
    s.input = seqenc::prepare(seq, seq_cfg);
    return s;
}

// Training: every train visit with at least one predecessor. Evaluation:
// every visit of the split, history = all earlier visits (truncated).
inline std::vector<Sample> build_samples(const CheckinDataset& ds, Split split, std::size_t max_seq,
                                         const seqenc::Config& seq_cfg) {
    std::vector<Sample> out;
    for (std::size_t u = 0; u < ds.users.size(); ++u) {
        const auto& visits = ds.users[u].visits;
        for (std::size_t p = 1; p < visits.size(); ++p) {
            if (visits[p].split == split) out.push_back(make_sample(ds, u, p, max_seq, seq_cfg));
        }
    }
    return out;
}

// Forward values for a batch; row r belongs to batch[r].
struct Prediction {
    std::vector<Tensor> users;  // x_u per sample
    Tensor x_u;                 // (B, d)
    Tensor prototype;           // (B, d); undefined without location
    Tensor v0;                  // (B, d); sampled preference, the prototype when sampling is off
    Tensor logits;              // (B, |L|)
};

// Random streams for one batch. Per-sample streams keep a sample's draws
// independent of which batch it lands in.
struct Streams {
    std::vector<core::Rng> dropout;  // encoders and Fisher term, per sample
    std::vector<core::Rng> noise;    // sampler noise, per sample
    std::vector<core::Rng> fisher;   // (t, eps) draws, per sample
    core::Rng batch_dropout;         // score network inside the sampler
};

struct BatchLoss {
    Tensor total;
    double ce = 0.0;      // batch mean
    double fisher = 0.0;  // batch mean
    double reg = 0.0;     // sum of squared trainable parameters
};

inline Tensor stack_rows(const std::vector<Tensor>& rows) {
    const std::size_t d = rows.front().size();
    if (rows.size() == 1) return core::reshape(rows.front(), {1, d});
    return core::reshape(core::concat(rows), {rows.size(), d});
}

class Model {
public:
    // Parameters bound onto one tape, with E^g and its prototype
    // projections computed once per tape.
    struct Tape {
        core::Binding binding;
        Tensor poi;    // E^l
        Tensor geo;    // E^g
        Tensor geo_k;  // E^g W_K
        Tensor geo_v;  // E^g W_V
        seqenc::Encoder seq;
        geoenc::Encoder geo_enc;
        diffusion::ScoreNet score;
    };

    Model(const TrainConfig& cfg, const std::vector<ingest::LatLon>& coords) : cfg_(cfg), num_pois_(coords.size()) {
        validate(cfg_);
        if (num_pois_ == 0) throw DataError("model: empty POI catalog");
        if (cfg_.uses_geo() && !cfg_.wo_graph) adj_ = geoenc::normalize(ingest::build_geo_graph(coords, cfg_.geo_threshold_km));
        adj_.nodes = num_pois_;
        core::Rng rng(stream_seed(cfg_.seed, Stream::init, {}));
        const double sd = 1.0 / std::sqrt(static_cast<double>(cfg_.dim));
        params_.add_normal("poi.E", {num_pois_, cfg_.dim}, sd, rng);
        if (!cfg_.wo_graph) seqenc::declare(params_, cfg_.seq_config(), rng);
        if (cfg_.uses_geo()) geoenc::declare(params_, geo_config(), rng);
        if (cfg_.uses_sampler()) diffusion::declare(params_, cfg_.score_config(), rng);
        for (const auto& prefix : cfg_.freeze) {
            bool hit = false;
            for (auto& p : params_.all()) {
                if (p.name.rfind(prefix, 0) == 0) {
                    p.trainable = false;
                    hit = true;
                }
            }
            if (!hit) throw UsageError("freeze: no parameter matches '" + prefix + "'");
        }
        adam_ = core::make_adam(params_, cfg_.lr);
    }

    const TrainConfig& config() const { return cfg_; }
    std::size_t num_pois() const { return num_pois_; }
    std::size_t dim() const { return cfg_.dim; }
    core::ParameterStore& params() { return params_; }
    const core::ParameterStore& params() const { return params_; }
    core::AdamState& adam() { return adam_; }
    const core::AdamState& adam() const { return adam_; }
    const geoenc::NormalizedAdjacency& adjacency() const { return adj_; }

    seqenc::Config seq_config() const { return cfg_.seq_config(); }
    geoenc::Config geo_config() const {
        auto g = cfg_.geo_config();
        if (cfg_.wo_graph) g.layers = 0;
        return g;
    }

    std::vector<Sample> samples(const CheckinDataset& ds, Split split) const {
        if (ds.pois.size() != num_pois_) throw DataError("model: dataset catalog size differs from the model");
        return build_samples(ds, split, cfg_.max_seq, seq_config());
    }

    Tape bind(bool requires_grad) const {
        Tape t;
        t.binding = params_.bind(requires_grad);
        t.poi = t.binding["poi.E"];
        if (!cfg_.wo_graph) t.seq = seqenc::Encoder::bind(t.binding, seq_config());
        if (cfg_.uses_geo()) {
            t.geo_enc = geoenc::Encoder::bind(t.binding, geo_config());
            t.geo = cfg_.wo_graph ? t.poi : t.geo_enc.embeddings(adj_, t.poi);
            t.geo_k = core::matmul(t.geo, t.geo_enc.prototype.wk);
            t.geo_v = core::matmul(t.geo, t.geo_enc.prototype.wv);
        }
        if (cfg_.uses_sampler()) t.score = diffusion::ScoreNet::bind(t.binding, cfg_.score_config());
        return t;
    }

    Streams train_streams(std::span<const Sample* const> batch, std::uint64_t epoch) const {
        Streams st;
        for (const Sample* s : batch) {
            st.dropout.emplace_back(stream_seed(cfg_.seed, Stream::dropout, {epoch, s->user, s->pos}));
            st.noise.emplace_back(stream_seed(cfg_.seed, Stream::sampler, {epoch, s->user, s->pos}));
            st.fisher.emplace_back(stream_seed(cfg_.seed, Stream::fisher, {epoch, s->user, s->pos}));
        }
        st.batch_dropout = core::Rng(stream_seed(cfg_.seed, Stream::dropout, {epoch, batch.front()->user,
                                                                               batch.front()->pos, batch.size()}));
        return st;
    }

    // Evaluation noise depends only on (seed, split, sample).
    Streams eval_streams(std::span<const Sample* const> batch, Split split) const {
        Streams st;
        for (const Sample* s : batch) {
            st.dropout.emplace_back(0);
            st.noise.emplace_back(
                stream_seed(cfg_.seed, Stream::eval_sampler, {static_cast<std::uint64_t>(split), s->user, s->pos}));
            st.fisher.emplace_back(0);
        }
        return st;
    }

    Tensor user_state(const Tape& t, const Sample& s, const core::ForwardContext& ctx) const {
        if (cfg_.wo_graph) return core::mean_rows(core::row_gather(t.poi, s.history));
        return t.seq.encode(t.poi, s.input, ctx);
    }

    Tensor prototype(const Tape& t, const Sample& s, const Tensor& x_u, const core::ForwardContext& ctx) const {
        return t.geo_enc.prototype.attend(x_u, core::row_gather(t.geo_k, s.history),
                                          core::row_gather(t.geo_v, s.history), ctx);
    }

    // logit_i = alpha <e_i^l, x_u> + (1 - alpha) <e_i^g, v0>, one row per sample.
    Tensor logits(const Tape& t, const Tensor& x_u, const Tensor& v0) const {
        const Tensor seq_term = core::matmul(x_u, core::transpose(t.poi));
        if (!cfg_.uses_geo()) return seq_term;
        const double a = cfg_.effective_alpha();
        return core::add(core::scale(seq_term, a), core::scale(core::matmul(v0, core::transpose(t.geo)), 1.0 - a));
    }

    // `states` (optional) receives the flattened (B, d) sampler state per step.
    Prediction predict(const Tape& t, std::span<const Sample* const> batch, bool training, Streams& st,
                       std::vector<std::vector<double>>* states = nullptr) const {
        if (batch.empty()) throw std::invalid_argument("predict: empty batch");
        Prediction p;
        std::vector<Tensor> protos;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const core::ForwardContext ctx{training, cfg_.dropout, &st.dropout[i]};
            p.users.push_back(user_state(t, *batch[i], ctx));
            if (cfg_.uses_geo()) protos.push_back(prototype(t, *batch[i], p.users.back(), ctx));
        }
        p.x_u = stack_rows(p.users);
        if (cfg_.uses_geo()) {
            p.prototype = stack_rows(protos);
            if (cfg_.uses_sampler()) {
                auto scfg = cfg_.sampler();
                if (!training) scfg.backprop = false;
                const core::ForwardContext ctx{training, cfg_.dropout, &st.batch_dropout};
                const Tensor x = p.x_u;
                const diffusion::ScoreFn score = [&t, x, ctx](const Tensor& v, double time) {
                    return t.score(v, x, time, ctx);
                };
                p.v0 = diffusion::reverse_sample_with(p.prototype, score, cfg_.schedule(), scfg,
                                                      diffusion::row_noise(st.noise), states);
            } else {
                p.v0 = p.prototype;
                if (states) states->push_back(p.v0.to_vector());
            }
        }
        p.logits = logits(t, p.x_u, p.v0);
        return p;
    }

    // Fisher term for one sample, with the target's geographical embedding as v0.
    Tensor fisher(const Tape& t, const Sample& s, const Tensor& x_u, const core::ForwardContext& ctx,
                  core::Rng& rng) const {
        const Tensor target = core::reshape(core::row_gather(t.geo, {s.target}), {cfg_.dim});
        const auto draw = diffusion::draw_fisher(cfg_.dim, cfg_.schedule(), cfg_.t_floor, rng);
        return diffusion::fisher_loss(target, x_u, t.score, cfg_.schedule(), draw, ctx);
    }

    // mean_i(ce_i + gamma fisher_i) + lambda ||Theta||^2 over one tape.
    BatchLoss batch_loss(const Tape& t, std::span<const Sample* const> batch, std::uint64_t epoch,
                         bool training) const {
        if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
        auto where = [&](const Sample& s) {
            return "epoch " + std::to_string(epoch) + ", user " + std::to_string(s.user) + ", visit " +
                   std::to_string(s.pos);
        };
        Streams st = train_streams(batch, epoch);
        Prediction p;
        try {
            p = predict(t, batch, training, st);
        } catch (const NumericalError& e) {
            throw NumericalError("batch at " + where(*batch.front()) + ": " + e.what());
        }
        BatchLoss out;
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        std::vector<std::size_t> targets;
        for (const Sample* s : batch) targets.push_back(s->target);
        const Tensor log_probs = core::log_softmax_lastdim(p.logits);
        Tensor sum_terms = ce_sum(log_probs, targets);
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const double ce = -log_probs.at(i, targets[i]);
            if (!std::isfinite(ce)) throw NumericalError(where(*batch[i]) + ": non-finite loss");
            out.ce += ce * inv_n;
        }
        if (cfg_.uses_sampler() && cfg_.gamma > 0.0) {
            Tensor fisher_sum;
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const core::ForwardContext ctx{training, cfg_.dropout, &st.dropout[i]};
                Tensor f;
                try {
                    f = fisher(t, *batch[i], p.users[i], ctx, st.fisher[i]);
                } catch (const NumericalError& e) {
                    throw NumericalError(where(*batch[i]) + ": " + e.what());
                }
                if (!std::isfinite(f.item())) throw NumericalError(where(*batch[i]) + ": non-finite Fisher loss");
                out.fisher += f.item() * inv_n;
                fisher_sum = fisher_sum.defined() ? core::add(fisher_sum, f) : f;
            }
            sum_terms = core::add(sum_terms, core::scale(fisher_sum, cfg_.gamma));
        }
        out.total = core::scale(sum_terms, inv_n);
        if (cfg_.lambda > 0.0) {
            Tensor reg;
            const auto& leaves = t.binding.leaves();
            for (std::size_t i = 0; i < leaves.size(); ++i) {
                if (!params_.all()[i].trainable) continue;
                const Tensor sq = core::l2_norm_squared(leaves[i]);
                reg = reg.defined() ? core::add(reg, sq) : sq;
            }
            if (reg.defined()) {
                out.reg = reg.item();
                out.total = core::add(out.total, core::scale(reg, cfg_.lambda));
            }
        }
        return out;
    }

    // Rank of every sample's target under the full-catalog logits.
    std::vector<std::size_t> ranks(const std::vector<Sample>& samples, Split split, std::size_t chunk = 64) const {
        const Tape t = bind(false);
        std::vector<std::size_t> out;
        out.reserve(samples.size());
        for (std::size_t start = 0; start < samples.size(); start += chunk) {
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) batch.push_back(&samples[i]);
            auto st = eval_streams(batch, split);
            const auto p = predict(t, batch, false, st);
            const auto logits = p.logits.data();
            for (std::size_t r = 0; r < batch.size(); ++r) {
                out.push_back(evalcli::rank_of(logits.subspan(r * num_pois_, num_pois_), batch[r]->target));
            }
        }
        return out;
    }

    // Single-sample evaluation forward; tensors are reshaped to vectors.
    Prediction predict_eval(const Tape& t, const Sample& s, Split split,
                            std::vector<std::vector<double>>* states = nullptr) const {
        const std::vector<const Sample*> batch{&s};
        auto st = eval_streams(batch, split);
        auto p = predict(t, batch, false, st, states);
        p.x_u = p.users.front();
        if (p.prototype.defined()) p.prototype = core::reshape(p.prototype, {cfg_.dim});
        if (p.v0.defined()) p.v0 = core::reshape(p.v0, {cfg_.dim});
        p.logits = core::reshape(p.logits, {num_pois_});
        return p;
    }

    // -log softmax(logits)[target], through log-sum-exp.
    static Tensor ce_term(const Tensor& logits, std::size_t target) {
        if (target >= logits.size()) throw std::out_of_range("ce_loss: target outside the catalog");
        return ce_sum(core::log_softmax_lastdim(core::reshape(logits, {1, logits.size()})), {target});
    }

    // Sum over rows of -log_probs[r, targets[r]].
    static Tensor ce_sum(const Tensor& log_probs, const std::vector<std::size_t>& targets) {
        const std::size_t cols = log_probs.cols();
        if (log_probs.rows() != targets.size()) throw ShapeError("ce_loss: one target per row expected");
        std::vector<double> pick(log_probs.size(), 0.0);
        for (std::size_t r = 0; r < targets.size(); ++r) {
            if (targets[r] >= cols) throw std::out_of_range("ce_loss: target outside the catalog");
            pick[r * cols + targets[r]] = -1.0;
        }
        return core::sum(core::multiply(log_probs, Tensor(log_probs.shape(), std::move(pick))));
    }

    std::size_t epoch = 0;  // last completed epoch
    double best_metric = 0.0;
    std::size_t best_epoch = 0;

private:
    TrainConfig cfg_;
    std::size_t num_pois_ = 0;
    geoenc::NormalizedAdjacency adj_;
    core::ParameterStore params_;
    core::AdamState adam_;
};

// Softmax over the full catalog.
inline std::vector<double> predict_scores(std::span<const double> logits) {
    const Tensor p = core::softmax_lastdim(Tensor::vector({logits.begin(), logits.end()}));
    return p.to_vector();
}

inline double total_loss(double ce, double fisher, double gamma) { return ce + gamma * fisher; }

// Tracks the best validation metric; strict improvement resets patience.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    bool update(std::size_t epoch, double metric) {
        if (metric > best_) {
            best_ = metric;
            best_epoch_ = epoch;
            stale_ = 0;
            return true;
        }
        ++stale_;
        return false;
    }

    bool should_stop() const { return stale_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
    double best_ = -std::numeric_limits<double>::infinity();
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double ce = 0.0;
    double fisher = 0.0;
    double valid_recall10 = 0.0;
    bool improved = false;
};

inline nlohmann::json to_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"loss", r.loss}, {"ce", r.ce}, {"fisher", r.fisher},
            {"valid_recall10", r.valid_recall10}, {"improved", r.improved}};
}

struct FitResult {
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
    bool stopped_early = false;
};

inline nlohmann::json to_json(const FitResult& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.log) epochs.push_back(to_json(e));
    return {{"epochs", epochs}, {"best_epoch", r.best_epoch}, {"best_valid_recall10", r.best_metric},
            {"stopped_early", r.stopped_early}};
}

inline double mean_recall_at(const std::vector<std::size_t>& ranks, std::size_t k) {
    evalcli::MetricSums m;
    for (auto r : ranks) m.add(r);
    return m.recall_at(k);
}

// One Adam step on the mean batch loss. Returns the loss components.
inline BatchLoss train_step(Model& model, std::span<const Sample* const> batch, std::uint64_t epoch) {
    const auto tape = model.bind(true);
    auto loss = model.batch_loss(tape, batch, epoch, true);
    core::backward(loss.total);
    model.params().zero_grad();
    model.params().accumulate(tape.binding);
    core::adam_step(model.params(), model.adam());
    if (!model.params().all_finite()) {
        throw NumericalError("epoch " + std::to_string(epoch) + ": non-finite parameter after the optimizer step");
    }
    return loss;
}

// Shuffled mini-batch training with validation Recall@10 early stopping.
// The model ends holding the best snapshot.
inline FitResult fit(Model& model, const CheckinDataset& ds,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    const auto& cfg = model.config();
    const auto train = model.samples(ds, Split::train);
    const auto valid = model.samples(ds, Split::valid);
    if (train.empty()) throw DataError("fit: no training samples");
    if (valid.empty()) throw DataError("fit: empty validation split");

    FitResult result;
    EarlyStopper stopper(cfg.patience);
    core::ParameterStore best_params = model.params();
    core::AdamState best_adam = model.adam();
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        core::Rng shuffle(stream_seed(cfg.seed, Stream::shuffle, {epoch}));
        std::shuffle(order.begin(), order.end(), shuffle.engine());
        EpochRecord rec;
        rec.epoch = epoch;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<const Sample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train[order[i]]);
            const auto loss = train_step(model, batch, epoch);
            const double w = static_cast<double>(batch.size()) / static_cast<double>(train.size());
            rec.loss += loss.total.item() * w;
            rec.ce += loss.ce * w;
            rec.fisher += loss.fisher * w;
        }
        rec.valid_recall10 = mean_recall_at(model.ranks(valid, Split::valid), 10);
        rec.improved = stopper.update(epoch, rec.valid_recall10);
        model.epoch = epoch;
        if (rec.improved) {
            best_params = model.params();
            best_adam = model.adam();
        }
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (stopper.should_stop()) {
            result.stopped_early = true;
            break;
        }
    }
    for (std::size_t i = 0; i < best_params.all().size(); ++i) {
        *model.params().all()[i].value = *best_params.all()[i].value;
    }
    model.adam() = best_adam;
    model.epoch = stopper.best_epoch();
    model.best_epoch = stopper.best_epoch();
    model.best_metric = stopper.best();
    result.best_epoch = stopper.best_epoch();
    result.best_metric = stopper.best();
    return result;
}

}  // namespace diffpoi::model
