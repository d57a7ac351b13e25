#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "diffpoi/core/error.hpp"
#include "diffpoi/ingest/checkin.hpp"
#include "diffpoi/ingest/geo.hpp"

namespace diffpoi::ingest {

inline constexpr int kDataSchemaVersion = 1;

// Iteratively drops users and POIs with fewer than `min_core` visits until
// both constraints hold at once.
inline std::vector<CheckinRecord> five_core_filter(std::vector<CheckinRecord> records, std::size_t min_core = 5) {
    if (records.empty()) throw DataError("five_core_filter: no records");
    while (true) {
        std::unordered_map<std::string, std::size_t> per_user, per_poi;
        for (const auto& r : records) {
            ++per_user[r.user_id];
            ++per_poi[r.poi_id];
        }
        std::vector<CheckinRecord> kept;
        kept.reserve(records.size());
        for (auto& r : records) {
            if (per_user[r.user_id] >= min_core && per_poi[r.poi_id] >= min_core) kept.push_back(std::move(r));
        }
        const bool stable = kept.size() == records.size();
        records = std::move(kept);
        if (records.empty()) throw DataError("five_core_filter: dataset vanished (no user/POI survives the core constraint)");
        if (stable) return records;
    }
}

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };

inline std::string_view split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "unknown";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "valid") return Split::valid;
    if (s == "test") return Split::test;
    throw UsageError("unknown split: " + std::string(s));
}

struct Poi {
    std::string id;
    LatLon coord;
};

struct Visit {
    std::size_t poi = 0;
    std::int64_t timestamp = 0;
    Split split = Split::train;
};

struct UserHistory {
    std::string id;
    std::vector<Visit> visits;  // chronological
};

struct SplitCounts {
    std::size_t train = 0, valid = 0, test = 0;
};

// Per user: ceil(0.8 n) train, ceil(0.1 n) valid, rest test. The small
// epsilon keeps products like 0.1 * 30 from rounding up to 4.
inline SplitCounts split_counts(std::size_t n, double train_ratio = 0.8, double valid_ratio = 0.1) {
    auto up = [](double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); };
    SplitCounts c;
    c.train = std::min(n, std::max<std::size_t>(n > 0 ? 1 : 0, up(train_ratio * static_cast<double>(n))));
    c.valid = std::min(n - c.train, up(valid_ratio * static_cast<double>(n)));
    c.test = n - c.train - c.valid;
    return c;
}

struct CheckinDataset {
    std::vector<Poi> pois;
    std::vector<UserHistory> users;
    nlohmann::json provenance = nlohmann::json::object();  // preprocessing parameters

    std::size_t interactions() const {
        std::size_t n = 0;
        for (const auto& u : users) n += u.visits.size();
        return n;
    }

    double avg_visit() const {
        return users.empty() ? 0.0 : static_cast<double>(interactions()) / static_cast<double>(users.size());
    }

    std::vector<LatLon> coordinates() const {
        std::vector<LatLon> out;
        out.reserve(pois.size());
        for (const auto& p : pois) out.push_back(p.coord);
        return out;
    }

    std::size_t count(Split s) const {
        std::size_t n = 0;
        for (const auto& u : users) {
            for (const auto& v : u.visits) n += v.split == s;
        }
        return n;
    }
};

// Labels every user's visits in place and returns the number of users that
// could not receive all three splits.
inline std::size_t chrono_split(CheckinDataset& ds, double train_ratio = 0.8, double valid_ratio = 0.1) {
    std::size_t incomplete = 0;
    for (auto& u : ds.users) {
        for (std::size_t i = 1; i < u.visits.size(); ++i) {
            if (u.visits[i].timestamp < u.visits[i - 1].timestamp) {
                throw DataError("chrono_split: visits of user " + u.id + " are not sorted");
            }
        }
        const auto c = split_counts(u.visits.size(), train_ratio, valid_ratio);
        for (std::size_t i = 0; i < u.visits.size(); ++i) {
            u.visits[i].split = i < c.train ? Split::train : (i < c.train + c.valid ? Split::valid : Split::test);
        }
        if (c.valid == 0 || c.test == 0) ++incomplete;
    }
    return incomplete;
}

// Indexes users and POIs (both in ascending id order) from records sorted by
// (user, timestamp), then applies the chronological split.
inline CheckinDataset build_dataset(const std::vector<CheckinRecord>& records, double train_ratio = 0.8,
                                    double valid_ratio = 0.1) {
    CheckinDataset ds;
    std::map<std::string, LatLon> poi_coords;
    for (const auto& r : records) poi_coords.emplace(r.poi_id, LatLon{r.latitude, r.longitude});
    std::unordered_map<std::string, std::size_t> poi_index;
    for (const auto& [id, c] : poi_coords) {
        poi_index.emplace(id, ds.pois.size());
        ds.pois.push_back({id, c});
    }
    for (const auto& r : records) {
        if (ds.users.empty() || ds.users.back().id != r.user_id) {
            if (!ds.users.empty() && ds.users.back().id > r.user_id) {
                throw DataError("build_dataset: records are not sorted by user");
            }
            ds.users.push_back({r.user_id, {}});
        }
        ds.users.back().visits.push_back({poi_index.at(r.poi_id), r.timestamp, Split::train});
    }
    chrono_split(ds, train_ratio, valid_ratio);
    return ds;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline std::vector<std::string> read_table(const std::filesystem::path& path, std::size_t columns) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::string> rows;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        if (split_tabs(line).size() != columns) {
            throw DataError(path.string() + ": expected " + std::to_string(columns) + " columns in '" + line + "'");
        }
        rows.push_back(line);
    }
    return rows;
}

}  // namespace detail

// Layout: manifest.json, pois.tsv (index, poi_id, lat, lon),
// visits.tsv (user_index, user_id, poi_index, timestamp), splits.tsv
// (user_index, train, valid, test). Tables carry one header row.
inline void save_dataset(const CheckinDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "pois.tsv", std::ios::binary);
        out << "index\tpoi_id\tlatitude\tlongitude\n";
        for (std::size_t i = 0; i < ds.pois.size(); ++i) {
            out << i << '\t' << ds.pois[i].id << '\t' << detail::format_double(ds.pois[i].coord.lat) << '\t'
                << detail::format_double(ds.pois[i].coord.lon) << '\n';
        }
        if (!out) throw DataError("failed writing pois.tsv");
    }
    {
        std::ofstream out(dir / "visits.tsv", std::ios::binary);
        out << "user_index\tuser_id\tpoi_index\ttimestamp\n";
        for (std::size_t u = 0; u < ds.users.size(); ++u) {
            for (const auto& v : ds.users[u].visits) {
                out << u << '\t' << ds.users[u].id << '\t' << v.poi << '\t' << v.timestamp << '\n';
            }
        }
        if (!out) throw DataError("failed writing visits.tsv");
    }
    {
        std::ofstream out(dir / "splits.tsv", std::ios::binary);
        out << "user_index\ttrain\tvalid\ttest\n";
        for (std::size_t u = 0; u < ds.users.size(); ++u) {
            SplitCounts c;
            for (const auto& v : ds.users[u].visits) {
                (v.split == Split::train ? c.train : v.split == Split::valid ? c.valid : c.test)++;
            }
            out << u << '\t' << c.train << '\t' << c.valid << '\t' << c.test << '\n';
        }
        if (!out) throw DataError("failed writing splits.tsv");
    }
    nlohmann::json m;
    m["schema_version"] = kDataSchemaVersion;
    m["preprocessing"] = ds.provenance;
    m["users"] = ds.users.size();
    m["pois"] = ds.pois.size();
    m["interactions"] = ds.interactions();
    m["avg_visit"] = ds.avg_visit();
    m["split_counts"] = {{"train", ds.count(Split::train)},
                         {"valid", ds.count(Split::valid)},
                         {"test", ds.count(Split::test)}};
    m["tables"] = {{"pois", "pois.tsv"}, {"visits", "visits.tsv"}, {"splits", "splits.tsv"}};
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << m.dump(2) << '\n';
    if (!out) throw DataError("failed writing manifest.json");
}

inline CheckinDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream min(dir / "manifest.json");
    if (!min) throw DataError("no manifest.json in " + dir.string());
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(min);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("manifest.json: ") + e.what());
    }
    if (m.value("schema_version", 0) != kDataSchemaVersion) {
        throw DataError("manifest.json: unsupported schema_version");
    }
    CheckinDataset ds;
    ds.provenance = m.value("preprocessing", nlohmann::json::object());

    auto num = [](std::string_view s, const char* what) {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size()) throw DataError(std::string("bad ") + what + ": " + std::string(s));
        return v;
    };
    auto real = [](std::string_view s) {
        auto v = detail::to_double(s);
        if (!v) throw DataError("bad coordinate: " + std::string(s));
        return *v;
    };

    for (const auto& row : detail::read_table(dir / "pois.tsv", 4)) {
        auto f = detail::split_tabs(row);
        if (static_cast<std::size_t>(num(f[0], "poi index")) != ds.pois.size()) throw DataError("pois.tsv: index gap");
        Poi p{std::string(f[1]), {real(f[2]), real(f[3])}};
        if (!valid_coordinate(p.coord)) throw DataError("pois.tsv: coordinate out of range for " + p.id);
        ds.pois.push_back(std::move(p));
    }
    for (const auto& row : detail::read_table(dir / "visits.tsv", 4)) {
        auto f = detail::split_tabs(row);
        const auto u = static_cast<std::size_t>(num(f[0], "user index"));
        if (u == ds.users.size()) ds.users.push_back({std::string(f[1]), {}});
        if (u + 1 != ds.users.size()) throw DataError("visits.tsv: users out of order");
        const auto poi = static_cast<std::size_t>(num(f[2], "poi index"));
        if (poi >= ds.pois.size()) throw DataError("visits.tsv: poi index out of range");
        ds.users.back().visits.push_back({poi, num(f[3], "timestamp"), Split::train});
    }
    const auto split_rows = detail::read_table(dir / "splits.tsv", 4);
    if (split_rows.size() != ds.users.size()) throw DataError("splits.tsv: row count does not match users");
    for (const auto& row : split_rows) {
        auto f = detail::split_tabs(row);
        const auto u = static_cast<std::size_t>(num(f[0], "user index"));
        if (u >= ds.users.size()) throw DataError("splits.tsv: user index out of range");
        const auto tr = static_cast<std::size_t>(num(f[1], "count"));
        const auto va = static_cast<std::size_t>(num(f[2], "count"));
        const auto te = static_cast<std::size_t>(num(f[3], "count"));
        auto& visits = ds.users[u].visits;
        if (tr + va + te != visits.size()) throw DataError("splits.tsv: counts do not cover user " + ds.users[u].id);
        for (std::size_t i = 0; i < visits.size(); ++i) {
            visits[i].split = i < tr ? Split::train : (i < tr + va ? Split::valid : Split::test);
        }
    }
    return ds;
}

}  // namespace diffpoi::ingest
