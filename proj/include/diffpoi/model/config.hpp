#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffpoi/core/error.hpp"
#include "diffpoi/diffusion/score_net.hpp"
#include "diffpoi/diffusion/sde.hpp"
#include "diffpoi/geoenc/encoder.hpp"
#include "diffpoi/seqenc/encoder.hpp"

namespace diffpoi::model {

struct TrainConfig {
    std::size_t dim = 64;
    double lr = 1e-3;
    double alpha = 0.5;
    double gamma = 0.2;
    double lambda = 1e-3;
    double dropout = 0.2;
    std::size_t patience = 10;
    std::size_t max_epochs = 100;
    std::size_t batch_size = 32;
    std::size_t delta_s = 256;
    std::size_t delta_t = 256;
    std::size_t max_seq = 100;
    std::size_t seq_layers = 2;
    std::size_t geo_layers = 2;
    double geo_threshold_km = 1.0;
    double beta_min = 0.1;
    double beta_max = 20.0;
    double horizon = 1.0;
    double step_size = 0.01;
    bool stochastic = true;
    bool final_noise = false;
    bool backprop_sampler = true;
    double t_floor = 1e-3;
    std::size_t score_hidden = 128;
    std::size_t score_depth = 2;
    bool score_time_input = false;
    bool wo_graph = false;
    bool wo_location = false;
    bool wo_sampling = false;
    bool wo_condition = false;
    std::string seqenc_variant = "full";
    std::vector<std::string> freeze;  // parameter-name prefixes excluded from updates
    std::uint64_t seed = 2023;

    // Effective sequential weight: the geographical term is dropped without location.
    double effective_alpha() const { return wo_location ? 1.0 : alpha; }
    bool uses_geo() const { return !wo_location; }
    bool uses_sampler() const { return !wo_location && !wo_sampling; }

    diffusion::NoiseSchedule schedule() const { return {beta_min, beta_max, horizon}; }
    diffusion::SamplerConfig sampler() const { return {step_size, stochastic, final_noise, backprop_sampler}; }
    seqenc::Config seq_config() const {
        return {dim, seq_layers, delta_s, delta_t, seqenc::parse_variant(seqenc_variant), 4};
    }
    geoenc::Config geo_config() const { return {dim, geo_layers}; }
    diffusion::ScoreNetConfig score_config() const {
        return {dim, score_hidden, score_depth, !wo_condition, score_time_input};
    }
};

#define DIFFPOI_CONFIG_FIELDS(X)                                                                                   \
    X(dim) X(lr) X(alpha) X(gamma) X(lambda) X(dropout) X(patience) X(max_epochs) X(batch_size) X(delta_s)        \
        X(delta_t) X(max_seq) X(seq_layers) X(geo_layers) X(geo_threshold_km) X(beta_min) X(beta_max) X(horizon) X(step_size)         \
            X(stochastic) X(final_noise) X(backprop_sampler) X(t_floor) X(score_hidden) X(score_depth)            \
                X(score_time_input) X(wo_graph) X(wo_location) X(wo_sampling) X(wo_condition) X(seqenc_variant)   \
                    X(freeze) X(seed)

inline nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j;
#define X(name) j[#name] = c.name;
    DIFFPOI_CONFIG_FIELDS(X)
#undef X
    return j;
}

// Rejects out-of-range values and contradictory ablation flags.
inline void apply_ablation(const TrainConfig& c) {
    if (c.wo_sampling && c.wo_condition) {
        throw UsageError("config: wo_sampling and wo_condition conflict (the score network is unused without sampling)");
    }
    if (c.wo_location && (c.wo_sampling || c.wo_condition)) {
        throw UsageError("config: wo_location removes the sampler; wo_sampling/wo_condition cannot be combined with it");
    }
    if (c.wo_graph && c.seqenc_variant != "full") {
        throw UsageError("config: wo_graph replaces the sequence encoder; seqenc_variant must stay 'full'");
    }
    seqenc::parse_variant(c.seqenc_variant);
}

inline void validate(const TrainConfig& c) {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw UsageError(std::string("config: ") + what);
    };
    require(c.dim > 0, "dim must be positive");
    require(c.alpha >= 0.0 && c.alpha <= 1.0, "alpha must lie in [0, 1]");
    require(c.gamma >= 0.0, "gamma must be nonnegative");
    require(c.lambda >= 0.0, "lambda must be nonnegative");
    require(c.lr > 0.0, "lr must be positive");
    require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must lie in [0, 1)");
    require(c.batch_size > 0, "batch_size must be positive");
    require(c.max_epochs > 0, "max_epochs must be positive");
    require(c.delta_s > 0 && c.delta_t > 0, "interval thresholds must be positive");
    require(c.max_seq > 0, "max_seq must be positive");
    require(c.geo_threshold_km > 0.0, "geo_threshold_km must be positive");
    require(c.score_hidden > 0 && c.score_depth > 0, "score network needs positive width and depth");
    require(c.t_floor > 0.0 && c.t_floor < c.horizon, "t_floor must lie in (0, T)");
    if (c.seqenc_variant == "disen-stub") require(c.dim % 4 == 0, "disen-stub needs dim divisible by 4");
    c.schedule().validate();
    c.sampler().steps(c.schedule());
    apply_ablation(c);
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw UsageError("config: expected a JSON object");
    TrainConfig c;
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        try {
#define X(name)                              \
    if (key == #name) {                      \
        value.get_to(c.name);                \
        known = true;                        \
    }
            DIFFPOI_CONFIG_FIELDS(X)
#undef X
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("config: bad value for '" + key + "': " + e.what());
        }
        if (!known) throw UsageError("config: unknown key '" + key + "'");
    }
    validate(c);
    return c;
}

// Flat `key = value` lines; '#' starts a comment. Values are JSON literals
// where possible, otherwise bare strings; `freeze` takes a comma list.
inline nlohmann::json parse_flat(const std::string& text) {
    nlohmann::json j = nlohmann::json::object();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key == "freeze") {
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
            std::vector<std::string> items;
            std::stringstream ss(value);
            for (std::string item; std::getline(ss, item, ',');) {
                if (!trim(item).empty()) items.push_back(trim(item));
            }
            j[key] = items;
            continue;
        }
        auto parsed = nlohmann::json::parse(value, nullptr, false);
        j[key] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
    }
    return j;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        auto j = nlohmann::json::parse(text, nullptr, false);
        if (j.is_discarded()) throw UsageError("config: invalid JSON in " + path);
        return config_from_json(j);
    }
    return config_from_json(parse_flat(text));
}

}  // namespace diffpoi::model
