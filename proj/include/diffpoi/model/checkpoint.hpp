#pragma once

// Binary checkpoint container.
//
// Layout (little-endian):
//   8 bytes   magic "DIFFPOI\0"
//   uint32    format version
//   uint64    manifest length N
//   N bytes   manifest JSON: config, epoch, metric, num_pois, dim, data_dir,
//             adam {step, lr, beta1, beta2, epsilon}, params [{name, shape, offset, count}]
//   doubles   parameter values, in manifest order
//   doubles   Adam first moments, then second moments, same order

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "diffpoi/core/error.hpp"
#include "diffpoi/model/config.hpp"
#include "diffpoi/model/model.hpp"

namespace diffpoi::model {

inline constexpr std::array<char, 8> kCheckpointMagic = {'D', 'I', 'F', 'F', 'P', 'O', 'I', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointFile {
    nlohmann::json manifest;
    TrainConfig config;
    std::vector<double> values;  // parameters then Adam moments
};

namespace detail {

template <class T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated header");
    return v;
}

inline void write_doubles(std::ostream& out, const std::vector<double>& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Model& model, const std::string& data_dir = "") {
    nlohmann::json params = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : model.params().all()) {
        params.push_back({{"name", p.name}, {"shape", p.shape}, {"offset", offset}, {"count", p.size()}});
        offset += p.size();
    }
    const auto& adam = model.adam();
    nlohmann::json m = {
        {"format", "diffpoi-checkpoint"},
        {"version", kCheckpointVersion},
        {"config", to_json(model.config())},
        {"epoch", model.epoch},
        {"best_epoch", model.best_epoch},
        {"metric", {{"name", "valid_recall10"}, {"value", model.best_metric}}},
        {"num_pois", model.num_pois()},
        {"dim", model.dim()},
        {"data_dir", data_dir},
        {"adam",
         {{"step", adam.step_count}, {"lr", adam.learning_rate}, {"beta1", adam.beta1}, {"beta2", adam.beta2},
          {"epsilon", adam.epsilon}}},
        {"params", params},
        {"value_count", offset}};
    const std::string text = m.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + path.string());
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::write_raw(out, kCheckpointVersion);
    detail::write_raw(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& p : model.params().all()) detail::write_doubles(out, *p.value);
    for (const auto& v : adam.first_moment) detail::write_doubles(out, v);
    for (const auto& v : adam.second_moment) detail::write_doubles(out, v);
    if (!out) throw DataError("checkpoint: write failed for " + path.string());
}

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw DataError("checkpoint: bad magic in " + path.string());
    const auto version = detail::read_raw<std::uint32_t>(in);
    if (version != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto len = detail::read_raw<std::uint64_t>(in);
    if (len > (1ULL << 30)) throw DataError("checkpoint: implausible manifest length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("checkpoint: truncated manifest");

    CheckpointFile f;
    f.manifest = nlohmann::json::parse(text, nullptr, false);
    if (f.manifest.is_discarded() || !f.manifest.is_object()) throw DataError("checkpoint: manifest is not JSON");
    try {
        f.config = config_from_json(f.manifest.at("config"));
        const auto count = f.manifest.at("value_count").get<std::size_t>();
        const std::size_t total = 3 * count;
        f.values.resize(total);
        in.read(reinterpret_cast<char*>(f.values.data()), static_cast<std::streamsize>(total * sizeof(double)));
        if (!in) throw DataError("checkpoint: truncated parameter blobs");
        if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
    } catch (const UsageError& e) {
        throw DataError(std::string("checkpoint: invalid stored config: ") + e.what());
    }
    return f;
}

// Rebuilds the model over `ds`. Refuses a catalog or embedding size that
// differs from the one the checkpoint was trained with.
inline Model restore_model(const CheckpointFile& f, const CheckinDataset& ds) {
    try {
        const auto& m = f.manifest;
        const auto num_pois = m.at("num_pois").get<std::size_t>();
        const auto dim = m.at("dim").get<std::size_t>();
        if (num_pois != ds.pois.size()) {
            throw DataError("checkpoint: trained on " + std::to_string(num_pois) + " POIs but the dataset has " +
                            std::to_string(ds.pois.size()));
        }
        if (dim != f.config.dim) throw DataError("checkpoint: manifest dim disagrees with its config");
        Model model(f.config, ds.coordinates());
        auto& params = model.params().all();
        const auto& entries = m.at("params");
        if (entries.size() != params.size()) throw DataError("checkpoint: parameter count mismatch");
        const auto count = m.at("value_count").get<std::size_t>();
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& e = entries[i];
            if (e.at("name").get<std::string>() != params[i].name || e.at("shape").get<core::Shape>() != params[i].shape) {
                throw DataError("checkpoint: parameter " + e.at("name").get<std::string>() + " does not match the model");
            }
            const auto off = e.at("offset").get<std::size_t>();
            const auto n = params[i].size();
            if (off + n > count) throw DataError("checkpoint: parameter blob out of range");
            std::copy_n(f.values.begin() + static_cast<std::ptrdiff_t>(off), n, params[i].value->begin());
            auto& adam = model.adam();
            std::copy_n(f.values.begin() + static_cast<std::ptrdiff_t>(count + off), n, adam.first_moment[i].begin());
            std::copy_n(f.values.begin() + static_cast<std::ptrdiff_t>(2 * count + off), n, adam.second_moment[i].begin());
        }
        const auto& a = m.at("adam");
        model.adam().step_count = a.at("step").get<std::uint64_t>();
        model.adam().learning_rate = a.at("lr").get<double>();
        model.adam().beta1 = a.at("beta1").get<double>();
        model.adam().beta2 = a.at("beta2").get<double>();
        model.adam().epsilon = a.at("epsilon").get<double>();
        model.epoch = m.at("epoch").get<std::size_t>();
        model.best_epoch = m.value("best_epoch", model.epoch);
        model.best_metric = m.at("metric").at("value").get<double>();
        if (!model.params().all_finite()) throw NumericalError("checkpoint: non-finite parameter values");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
}

inline Model load_model(const std::filesystem::path& path, const CheckinDataset& ds) {
    return restore_model(read_checkpoint(path), ds);
}

}  // namespace diffpoi::model
