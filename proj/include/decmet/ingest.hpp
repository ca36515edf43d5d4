#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "decmet/csv.hpp"
#include "decmet/errors.hpp"
#include "decmet/model.hpp"
#include "decmet/timeutil.hpp"

#include "json.hpp"

namespace decmet::ingest {

struct RowError {
    std::size_t line = 0;
    std::string message;
};

// Machine-readable validation report. Non-fatal row problems accumulate here
// instead of aborting the parse; fatal schema problems throw.
struct FileReport {
    std::string label;
    std::size_t rows_total = 0;  // data rows seen (header excluded)
    std::size_t rows_valid = 0;
    std::size_t zero_balance_dropped = 0;
    std::size_t empty_input_lists_skipped = 0;
    std::vector<RowError> row_errors;

    void error(std::size_t line, std::string msg) {
        row_errors.push_back({line, std::move(msg)});
    }
};

enum class AttributionKind { address_tag, block_tag, legal_link };

inline const char* to_string(AttributionKind k) {
    switch (k) {
        case AttributionKind::address_tag: return "address_tag";
        case AttributionKind::block_tag: return "block_tag";
        default: return "legal_link";
    }
}

inline std::optional<AttributionKind> attribution_kind_from(std::string_view s) {
    if (s == "address_tag") return AttributionKind::address_tag;
    if (s == "block_tag") return AttributionKind::block_tag;
    if (s == "legal_link") return AttributionKind::legal_link;
    return std::nullopt;
}

struct AttributionRecord {
    AttributionKind kind = AttributionKind::address_tag;
    std::string key;        // address, coinbase tag, or child entity id
    std::string entity_id;
    std::optional<Date> effective_from;
    std::optional<Date> effective_to;
    std::string source;

    bool operator==(const AttributionRecord&) const = default;
};

struct TxInputs {
    std::string tx_id;
    std::vector<std::string> addresses;  // deduplicated, sorted

    bool operator==(const TxInputs&) const = default;
};

struct StakeKeyRecord {
    std::string address;
    std::optional<std::string> stake_key;

    bool operator==(const StakeKeyRecord&) const = default;
};

namespace detail {

inline void expect_header(const std::optional<CsvRow>& row,
                          const std::vector<std::string>& expected, const std::string& label) {
    if (!row) throw EmptyInputError(label + ": file is empty");
    if (row->fields != expected) {
        std::string want;
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (i) want += ',';
            want += expected[i];
        }
        throw IngestError(label + ": bad header, expected '" + want + "'");
    }
}

inline std::vector<std::string> split_pipe(std::string_view s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        std::size_t pos = s.find('|', start);
        if (pos == std::string_view::npos) pos = s.size();
        std::string_view tok = s.substr(start, pos - start);
        if (!tok.empty()) out.emplace_back(tok);
        start = pos + 1;
        if (pos == s.size()) break;
    }
    return out;
}

inline std::string join_pipe(std::span<const std::string> items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += '|';
        out += items[i];
    }
    return out;
}

}  // namespace detail

// ---- blocks ----
// CSV: height,timestamp,reward_addresses,creator_tag
// reward_addresses is |-separated; timestamps are ISO-8601 UTC.

inline std::vector<BlockRecord> parse_blocks(std::istream& in, FileReport& report) {
    CsvReader reader(in);
    detail::expect_header(reader.next(), {"height", "timestamp", "reward_addresses", "creator_tag"},
                          report.label);
    std::vector<BlockRecord> out;
    while (auto row = reader.next()) {
        ++report.rows_total;
        if (row->fields.size() != 4) {
            report.error(row->line, "expected 4 fields");
            continue;
        }
        auto height = parse_u64(row->fields[0]);
        if (!height) {
            report.error(row->line, "bad height '" + row->fields[0] + "'");
            continue;
        }
        auto ts = parse_instant(row->fields[1]);
        if (!ts) {
            report.error(row->line, "bad timestamp '" + row->fields[1] + "'");
            continue;
        }
        auto addrs = detail::split_pipe(row->fields[2]);
        if (addrs.empty()) {
            report.error(row->line, "empty reward address list");
            continue;
        }
        BlockRecord b;
        b.height = *height;
        b.timestamp = *ts;
        b.reward_addresses = std::move(addrs);
        if (!row->fields[3].empty()) b.creator_tag = row->fields[3];
        out.push_back(std::move(b));
        ++report.rows_valid;
    }
    if (out.empty()) throw EmptyInputError(report.label + ": no valid block rows");
    std::sort(out.begin(), out.end(),
              [](const BlockRecord& a, const BlockRecord& b) { return a.height < b.height; });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].height == out[i - 1].height)
            throw DuplicateHeightError(report.label + ": duplicate block height " +
                                       std::to_string(out[i].height));
    return out;
}

// ---- balances ----
// CSV: address,balance,snapshot_date. Zero balances are dropped and counted;
// a negative balance is a row-level error; the same address twice within one
// snapshot date is fatal.

inline std::vector<BalanceRecord> parse_balances(std::istream& in, FileReport& report) {
    CsvReader reader(in);
    detail::expect_header(reader.next(), {"address", "balance", "snapshot_date"}, report.label);
    std::vector<BalanceRecord> out;
    std::set<std::pair<Date, std::string>> seen;
    while (auto row = reader.next()) {
        ++report.rows_total;
        if (row->fields.size() != 3) {
            report.error(row->line, "expected 3 fields");
            continue;
        }
        if (row->fields[0].empty()) {
            report.error(row->line, "empty address");
            continue;
        }
        auto date = parse_date(row->fields[2]);
        if (!date) {
            report.error(row->line, "bad snapshot_date '" + row->fields[2] + "'");
            continue;
        }
        const std::string& bal = row->fields[1];
        if (!bal.empty() && bal[0] == '-') {
            report.error(row->line, "negative balance '" + bal + "'");
            continue;
        }
        auto amount = parse_u64(bal);
        if (!amount) {
            report.error(row->line, "bad balance '" + bal + "'");
            continue;
        }
        if (!seen.emplace(*date, row->fields[0]).second)
            throw DuplicateAddressError(report.label + ": address '" + row->fields[0] +
                                        "' appears twice in snapshot " + format_date(*date));
        ++report.rows_valid;
        if (*amount == 0) {
            ++report.zero_balance_dropped;
            continue;
        }
        out.push_back({row->fields[0], *amount, *date});
    }
    return out;
}

// ---- attribution ----
// CSV: kind,key,entity_id,effective_from,effective_to,source

namespace detail {

inline std::optional<AttributionRecord> validate_attribution(
    AttributionKind kind, std::string key, std::string entity, std::optional<Date> from,
    std::optional<Date> to, std::string source, std::size_t line, FileReport& report) {
    if (key.empty() || entity.empty()) {
        report.error(line, "key and entity_id are required");
        return std::nullopt;
    }
    if (kind == AttributionKind::legal_link && key == entity) {
        report.error(line, "self-merge: '" + key + "' linked to itself");
        return std::nullopt;
    }
    if (from && to && *from > *to) {
        report.error(line, "inverted date range");
        return std::nullopt;
    }
    AttributionRecord r;
    r.kind = kind;
    r.key = std::move(key);
    r.entity_id = std::move(entity);
    r.effective_from = from;
    r.effective_to = to;
    r.source = std::move(source);
    ++report.rows_valid;
    return r;
}

}  // namespace detail

inline std::vector<AttributionRecord> parse_attribution(std::istream& in, FileReport& report) {
    CsvReader reader(in);
    detail::expect_header(
        reader.next(), {"kind", "key", "entity_id", "effective_from", "effective_to", "source"},
        report.label);
    std::vector<AttributionRecord> out;
    while (auto row = reader.next()) {
        ++report.rows_total;
        if (row->fields.size() != 6) {
            report.error(row->line, "expected 6 fields");
            continue;
        }
        auto kind = attribution_kind_from(row->fields[0]);
        if (!kind) {
            report.error(row->line, "unknown kind '" + row->fields[0] + "'");
            continue;
        }
        std::optional<Date> from, to;
        if (!row->fields[3].empty()) {
            from = parse_date(row->fields[3]);
            if (!from) {
                report.error(row->line, "bad effective_from '" + row->fields[3] + "'");
                continue;
            }
        }
        if (!row->fields[4].empty()) {
            to = parse_date(row->fields[4]);
            if (!to) {
                report.error(row->line, "bad effective_to '" + row->fields[4] + "'");
                continue;
            }
        }
        auto rec = detail::validate_attribution(*kind, row->fields[1], row->fields[2], from, to,
                                                row->fields[5], row->line, report);
        if (rec) out.push_back(std::move(*rec));
    }
    return out;
}

// JSON alternative: an array of objects using the same field names as the
// CSV header; optional fields may be omitted or null.
inline std::vector<AttributionRecord> parse_attribution_json(std::istream& in,
                                                             FileReport& report) {
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(report.label + ": invalid JSON: " + e.what());
    }
    if (!doc.is_array()) throw IngestError(report.label + ": expected a JSON array");
    std::vector<AttributionRecord> out;
    std::size_t idx = 0;
    for (const auto& item : doc) {
        ++idx;
        ++report.rows_total;
        if (!item.is_object()) {
            report.error(idx, "entry is not an object");
            continue;
        }
        auto str_field = [&](const char* name) -> std::string {
            auto it = item.find(name);
            if (it == item.end() || it->is_null()) return {};
            return it->is_string() ? it->get<std::string>() : std::string{};
        };
        auto kind = attribution_kind_from(str_field("kind"));
        if (!kind) {
            report.error(idx, "unknown kind '" + str_field("kind") + "'");
            continue;
        }
        std::optional<Date> from, to;
        std::string from_s = str_field("effective_from"), to_s = str_field("effective_to");
        if (!from_s.empty()) {
            from = parse_date(from_s);
            if (!from) {
                report.error(idx, "bad effective_from '" + from_s + "'");
                continue;
            }
        }
        if (!to_s.empty()) {
            to = parse_date(to_s);
            if (!to) {
                report.error(idx, "bad effective_to '" + to_s + "'");
                continue;
            }
        }
        auto rec = detail::validate_attribution(*kind, str_field("key"), str_field("entity_id"),
                                                from, to, str_field("source"), idx, report);
        if (rec) out.push_back(std::move(*rec));
    }
    return out;
}

// ---- transaction inputs ----
// CSV: tx_id,input_addresses (|-separated). Rows with an empty address list
// are skipped and counted; address lists are deduplicated per transaction.

inline std::vector<TxInputs> parse_tx_inputs(std::istream& in, FileReport& report) {
    CsvReader reader(in);
    detail::expect_header(reader.next(), {"tx_id", "input_addresses"}, report.label);
    std::vector<TxInputs> out;
    while (auto row = reader.next()) {
        ++report.rows_total;
        if (row->fields.size() != 2) {
            report.error(row->line, "expected 2 fields");
            continue;
        }
        if (row->fields[0].empty()) {
            report.error(row->line, "empty tx_id");
            continue;
        }
        auto addrs = detail::split_pipe(row->fields[1]);
        std::sort(addrs.begin(), addrs.end());
        addrs.erase(std::unique(addrs.begin(), addrs.end()), addrs.end());
        if (addrs.empty()) {
            ++report.empty_input_lists_skipped;
            continue;
        }
        ++report.rows_valid;
        out.push_back({row->fields[0], std::move(addrs)});
    }
    return out;
}

// ---- stake keys ----
// CSV: address,stake_key. An empty stake_key means the address has none.

inline std::vector<StakeKeyRecord> parse_stake_keys(std::istream& in, FileReport& report) {
    CsvReader reader(in);
    detail::expect_header(reader.next(), {"address", "stake_key"}, report.label);
    std::vector<StakeKeyRecord> out;
    while (auto row = reader.next()) {
        ++report.rows_total;
        if (row->fields.size() != 2 || row->fields[0].empty()) {
            report.error(row->line, "expected address,stake_key");
            continue;
        }
        ++report.rows_valid;
        StakeKeyRecord rec;
        rec.address = row->fields[0];
        if (!row->fields[1].empty()) rec.stake_key = row->fields[1];
        out.push_back(std::move(rec));
    }
    return out;
}

// ---- writers (exact inverses of the parsers, used for fixtures and round trips) ----

inline void write_blocks_csv(std::ostream& os, std::span<const BlockRecord> blocks) {
    write_csv_row(os, {"height", "timestamp", "reward_addresses", "creator_tag"});
    for (const auto& b : blocks) {
        write_csv_row(os, {std::to_string(b.height), format_instant(b.timestamp),
                           detail::join_pipe(b.reward_addresses), b.creator_tag.value_or("")});
    }
}

inline void write_balances_csv(std::ostream& os, std::span<const BalanceRecord> balances) {
    write_csv_row(os, {"address", "balance", "snapshot_date"});
    for (const auto& r : balances)
        write_csv_row(os, {r.address, std::to_string(r.balance), format_date(r.snapshot_date)});
}

inline void write_attribution_csv(std::ostream& os, std::span<const AttributionRecord> recs) {
    write_csv_row(os, {"kind", "key", "entity_id", "effective_from", "effective_to", "source"});
    for (const auto& r : recs) {
        write_csv_row(os, {to_string(r.kind), r.key, r.entity_id,
                           r.effective_from ? format_date(*r.effective_from) : "",
                           r.effective_to ? format_date(*r.effective_to) : "", r.source});
    }
}

inline void write_tx_inputs_csv(std::ostream& os, std::span<const TxInputs> txs) {
    write_csv_row(os, {"tx_id", "input_addresses"});
    for (const auto& t : txs) write_csv_row(os, {t.tx_id, detail::join_pipe(t.addresses)});
}

inline void write_stake_keys_csv(std::ostream& os, std::span<const StakeKeyRecord> recs) {
    write_csv_row(os, {"address", "stake_key"});
    for (const auto& r : recs) write_csv_row(os, {r.address, r.stake_key.value_or("")});
}

// ---- file helpers ----

template <class Fn>
auto parse_file(const std::string& path, FileReport& report, Fn fn) {
    if (report.label.empty()) report.label = path;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError("cannot open '" + path + "'");
    return fn(in, report);
}

inline std::vector<BlockRecord> parse_blocks_file(const std::string& path, FileReport& report) {
    return parse_file(path, report,
                      [](std::istream& in, FileReport& r) { return parse_blocks(in, r); });
}
inline std::vector<BalanceRecord> parse_balances_file(const std::string& path,
                                                      FileReport& report) {
    return parse_file(path, report,
                      [](std::istream& in, FileReport& r) { return parse_balances(in, r); });
}
inline std::vector<AttributionRecord> parse_attribution_file(const std::string& path,
                                                             FileReport& report) {
    bool json = path.size() >= 5 && path.rfind(".json") == path.size() - 5;
    return parse_file(path, report, [json](std::istream& in, FileReport& r) {
        return json ? parse_attribution_json(in, r) : parse_attribution(in, r);
    });
}
inline std::vector<TxInputs> parse_tx_inputs_file(const std::string& path, FileReport& report) {
    return parse_file(path, report,
                      [](std::istream& in, FileReport& r) { return parse_tx_inputs(in, r); });
}
inline std::vector<StakeKeyRecord> parse_stake_keys_file(const std::string& path,
                                                         FileReport& report) {
    return parse_file(path, report,
                      [](std::istream& in, FileReport& r) { return parse_stake_keys(in, r); });
}

}  // namespace decmet::ingest
