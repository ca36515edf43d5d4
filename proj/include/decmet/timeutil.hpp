#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace decmet {

// All times are UTC. Instants carry second precision; anything finer in the
// input is truncated.
using Instant = std::chrono::sys_seconds;
using Date = std::chrono::sys_days;
using Duration = std::chrono::seconds;

inline constexpr Duration days_dur(double d) {
    return Duration{static_cast<long long>(d * 86400.0 + (d >= 0 ? 0.5 : -0.5))};
}

namespace detail {

inline bool parse_uint_field(std::string_view s, std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
        char c = s[i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

}  // namespace detail

// "YYYY-MM-DD"
inline std::optional<Date> parse_date(std::string_view s) {
    int y, m, d;
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
    if (!detail::parse_uint_field(s, 0, 4, y) || !detail::parse_uint_field(s, 5, 2, m) ||
        !detail::parse_uint_field(s, 8, 2, d))
        return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                    std::chrono::day{unsigned(d)}};
    if (!ymd.ok()) return std::nullopt;
    return Date{ymd};
}

// ISO-8601 UTC: "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS[.frac](Z|+00:00)".
// A space is accepted in place of 'T'. Fractional seconds are truncated.
inline std::optional<Instant> parse_instant(std::string_view s) {
    if (s.size() == 10) {
        auto d = parse_date(s);
        if (!d) return std::nullopt;
        return Instant{*d};
    }
    if (s.size() < 19) return std::nullopt;
    auto d = parse_date(s.substr(0, 10));
    if (!d) return std::nullopt;
    if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
    int hh, mm, ss;
    if (s[13] != ':' || s[16] != ':') return std::nullopt;
    if (!detail::parse_uint_field(s, 11, 2, hh) || !detail::parse_uint_field(s, 14, 2, mm) ||
        !detail::parse_uint_field(s, 17, 2, ss))
        return std::nullopt;
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    if (ss == 60) ss = 59;  // leap seconds clamp
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::size_t digits = 0;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
            ++pos;
            ++digits;
        }
        if (digits == 0) return std::nullopt;
    }
    std::string_view tz = s.substr(pos);
    if (!(tz == "Z" || tz == "+00:00" || tz == "+0000" || tz.empty()))
        return std::nullopt;
    return Instant{*d} + std::chrono::hours{hh} + std::chrono::minutes{mm} +
           std::chrono::seconds{ss};
}

inline std::string format_date(Date d) {
    std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                  unsigned(ymd.day()));
    return buf;
}

inline std::string format_instant(Instant t) {
    Date d = std::chrono::floor<std::chrono::days>(t);
    auto tod = std::chrono::hh_mm_ss{t - Instant{d}};
    std::chrono::year_month_day ymd{d};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()), int(tod.hours().count()),
                  int(tod.minutes().count()), int(tod.seconds().count()));
    return buf;
}

inline Date date_of(Instant t) { return std::chrono::floor<std::chrono::days>(t); }

}  // namespace decmet
