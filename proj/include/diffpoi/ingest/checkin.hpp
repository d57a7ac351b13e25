#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diffpoi/core/error.hpp"
#include "diffpoi/ingest/geo.hpp"

namespace diffpoi::ingest {

struct CheckinRecord {
    std::string user_id;
    std::string poi_id;
    double latitude = 0.0;
    double longitude = 0.0;
    std::int64_t timestamp = 0;  // seconds since epoch, UTC

    bool operator==(const CheckinRecord&) const = default;
};

enum class InputFormat { canonical_tsv, gowalla, foursquare };

inline InputFormat parse_format(std::string_view name) {
    if (name == "canonical_tsv") return InputFormat::canonical_tsv;
    if (name == "gowalla") return InputFormat::gowalla;
    if (name == "foursquare") return InputFormat::foursquare;
    throw UsageError("unknown input format: " + std::string(name));
}

inline std::string_view format_name(InputFormat f) {
    switch (f) {
        case InputFormat::canonical_tsv: return "canonical_tsv";
        case InputFormat::gowalla: return "gowalla";
        case InputFormat::foursquare: return "foursquare";
    }
    return "unknown";
}

struct ParseReport {
    std::size_t lines = 0;      // non-empty lines seen
    std::size_t malformed = 0;  // skipped
    std::vector<std::string> messages;  // first few diagnostics
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::optional<double> to_double(std::string_view s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<std::int64_t> to_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::int64_t civil_to_epoch(int y, unsigned mo, unsigned d, int h, int mi, int s) {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{mo}, day{d}};
    if (!ymd.ok()) throw std::invalid_argument("bad date");
    const auto days = sys_days{ymd}.time_since_epoch().count();
    return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + s;
}

// 2010-10-19T23:55:27Z
inline std::optional<std::int64_t> parse_iso8601(std::string_view s) {
    if (s.size() < 19 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' || s[16] != ':') return std::nullopt;
    auto y = to_int(s.substr(0, 4)), mo = to_int(s.substr(5, 2)), d = to_int(s.substr(8, 2));
    auto h = to_int(s.substr(11, 2)), mi = to_int(s.substr(14, 2)), se = to_int(s.substr(17, 2));
    if (!y || !mo || !d || !h || !mi || !se) return std::nullopt;
    if (*h > 23 || *mi > 59 || *se > 60) return std::nullopt;
    try {
        return civil_to_epoch(static_cast<int>(*y), static_cast<unsigned>(*mo), static_cast<unsigned>(*d),
                              static_cast<int>(*h), static_cast<int>(*mi), static_cast<int>(*se));
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

// Tue Apr 03 18:00:09 +0000 2012
inline std::optional<std::int64_t> parse_foursquare_time(std::string_view s) {
    std::istringstream is{std::string(s)};
    std::string dow, mon, hms, zone;
    int day = 0, year = 0;
    if (!(is >> dow >> mon >> day >> hms >> zone >> year)) return std::nullopt;
    static constexpr std::string_view months[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                  "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    unsigned mo = 0;
    for (unsigned i = 0; i < 12; ++i) {
        if (mon == months[i]) mo = i + 1;
    }
    if (mo == 0 || hms.size() != 8 || zone.size() != 5 || (zone[0] != '+' && zone[0] != '-')) return std::nullopt;
    auto h = to_int(std::string_view(hms).substr(0, 2)), mi = to_int(std::string_view(hms).substr(3, 2)),
         se = to_int(std::string_view(hms).substr(6, 2));
    auto zh = to_int(std::string_view(zone).substr(1, 2)), zm = to_int(std::string_view(zone).substr(3, 2));
    if (!h || !mi || !se || !zh || !zm) return std::nullopt;
    try {
        std::int64_t t = civil_to_epoch(year, mo, static_cast<unsigned>(day), static_cast<int>(*h),
                                        static_cast<int>(*mi), static_cast<int>(*se));
        const std::int64_t offset = (*zh * 3600 + *zm * 60) * (zone[0] == '-' ? -1 : 1);
        return t - offset;
    } catch (const std::invalid_argument&) {
        return std::nullopt;
    }
}

inline std::optional<CheckinRecord> parse_line(std::string_view line, InputFormat format) {
    auto f = split_tabs(line);
    CheckinRecord r;
    std::optional<double> lat, lon;
    std::optional<std::int64_t> ts;
    switch (format) {
        case InputFormat::canonical_tsv:
            // user, poi, lat, lon, epoch seconds
            if (f.size() != 5) return std::nullopt;
            r.user_id = f[0];
            r.poi_id = f[1];
            lat = to_double(f[2]);
            lon = to_double(f[3]);
            ts = to_int(f[4]);
            break;
        case InputFormat::gowalla:
            // user, ISO-8601 time, lat, lon, location id
            if (f.size() != 5) return std::nullopt;
            r.user_id = f[0];
            r.poi_id = f[4];
            lat = to_double(f[2]);
            lon = to_double(f[3]);
            ts = parse_iso8601(f[1]);
            break;
        case InputFormat::foursquare:
            // user, venue, category id, category name, lat, lon, tz offset, UTC time
            if (f.size() != 8) return std::nullopt;
            r.user_id = f[0];
            r.poi_id = f[1];
            lat = to_double(f[4]);
            lon = to_double(f[5]);
            ts = parse_foursquare_time(f[7]);
            break;
    }
    if (!lat || !lon || !ts || r.user_id.empty() || r.poi_id.empty()) return std::nullopt;
    r.latitude = *lat;
    r.longitude = *lon;
    r.timestamp = *ts;
    if (!valid_coordinate({r.latitude, r.longitude})) return std::nullopt;
    return r;
}

}  // namespace detail

// Parses a check-in stream. Malformed lines (bad fields, out-of-range
// coordinates, or a POI whose coordinates disagree with its first sighting)
// are skipped and counted; more than 10% malformed is a hard DataError.
// Output is stably sorted by (user, timestamp).
inline std::vector<CheckinRecord> parse_checkins(std::istream& in, InputFormat format, ParseReport* report = nullptr) {
    ParseReport local;
    ParseReport& rep = report ? *report : local;
    std::vector<CheckinRecord> out;
    std::unordered_map<std::string, LatLon> coords;
    std::string line;
    std::size_t lineno = 0;
    auto reject = [&](const std::string& why) {
        ++rep.malformed;
        if (rep.messages.size() < 20) rep.messages.push_back("line " + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        ++rep.lines;
        auto rec = detail::parse_line(line, format);
        if (!rec) {
            reject("unparseable record");
            continue;
        }
        auto [it, inserted] = coords.try_emplace(rec->poi_id, LatLon{rec->latitude, rec->longitude});
        if (!inserted && (it->second.lat != rec->latitude || it->second.lon != rec->longitude)) {
            reject("inconsistent coordinates for poi " + rec->poi_id);
            continue;
        }
        out.push_back(std::move(*rec));
    }
    if (rep.lines > 0 && static_cast<double>(rep.malformed) > 0.1 * static_cast<double>(rep.lines)) {
        throw DataError("parse_checkins: " + std::to_string(rep.malformed) + " of " + std::to_string(rep.lines) +
                        " lines malformed (more than 10%)");
    }
    std::stable_sort(out.begin(), out.end(), [](const CheckinRecord& a, const CheckinRecord& b) {
        return a.user_id < b.user_id || (a.user_id == b.user_id && a.timestamp < b.timestamp);
    });
    return out;
}

inline std::vector<CheckinRecord> parse_checkins(const std::string& path, InputFormat format,
                                                 ParseReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return parse_checkins(in, format, report);
}

}  // namespace diffpoi::ingest
