#pragma once

#include <cstdio>
#include <cstdlib>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "decmet/errors.hpp"

namespace decmet {

// Doubles are serialized with 12 significant digits everywhere so that equal
// values always produce equal bytes, independent of locale.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

struct CsvRow {
    std::vector<std::string> fields;
    std::size_t line = 0;
};

// Minimal RFC-4180 subset: comma separation, double-quote quoting with ""
// escapes, LF or CRLF endings. Quoted fields do not span lines.
class CsvReader {
  public:
    explicit CsvReader(std::istream& in) : in_(in) {}

    std::optional<CsvRow> next() {
        std::string raw;
        while (std::getline(in_, raw)) {
            ++line_;
            if (!raw.empty() && raw.back() == '\r') raw.pop_back();
            if (raw.empty()) continue;
            CsvRow row;
            row.line = line_;
            row.fields = parse_line(raw);
            return row;
        }
        return std::nullopt;
    }

    std::size_t line() const { return line_; }

    static std::vector<std::string> parse_line(std::string_view s) {
        std::vector<std::string> out;
        std::string field;
        bool quoted = false;
        std::size_t i = 0;
        while (i < s.size()) {
            char c = s[i];
            if (quoted) {
                if (c == '"') {
                    if (i + 1 < s.size() && s[i + 1] == '"') {
                        field.push_back('"');
                        ++i;
                    } else {
                        quoted = false;
                    }
                } else {
                    field.push_back(c);
                }
            } else if (c == '"' && field.empty()) {
                quoted = true;
            } else if (c == ',') {
                out.push_back(std::move(field));
                field.clear();
            } else {
                field.push_back(c);
            }
            ++i;
        }
        out.push_back(std::move(field));
        return out;
    }

  private:
    std::istream& in_;
    std::size_t line_ = 0;
};

inline std::string csv_escape(std::string_view s) {
    bool needs = s.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs) return std::string{s};
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

inline void write_csv_row(std::ostream& os, std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        os << csv_escape(fields[i]);
    }
    os << '\n';
}

inline void write_csv_row(std::ostream& os, std::initializer_list<std::string> fields) {
    write_csv_row(os, std::span<const std::string>{fields.begin(), fields.size()});
}

// Strict non-negative integer parse used by amount fields.
inline std::optional<unsigned long long> parse_u64(std::string_view s) {
    if (s.empty() || s.size() > 20) return std::nullopt;
    unsigned long long v = 0;
    for (char c : s) {
        if (c < '0' || c > '9') return std::nullopt;
        unsigned long long nv = v * 10 + (unsigned long long)(c - '0');
        if (nv / 10 != v) return std::nullopt;  // overflow
        v = nv;
    }
    return v;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::string tmp{s};
    char* end = nullptr;
    double v = std::strtod(tmp.c_str(), &end);
    if (end != tmp.c_str() + tmp.size()) return std::nullopt;
    return v;
}

}  // namespace decmet
