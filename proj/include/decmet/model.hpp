#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "decmet/errors.hpp"
#include "decmet/timeutil.hpp"

namespace decmet {

struct BlockRecord {
    std::uint64_t height = 0;
    Instant timestamp{};
    // Coinbase / fee-recipient addresses in ledger order.
    std::vector<std::string> reward_addresses;
    std::optional<std::string> creator_tag;
};

struct BalanceRecord {
    std::string address;
    std::uint64_t balance = 0;  // base units; zero-balance rows never reach here
    Date snapshot_date{};
};

// Half-open interval [start, end).
struct StudyWindow {
    Instant start{};
    Instant end{};

    bool contains(Instant t) const { return t >= start && t < end; }
    Duration length() const { return end - start; }
};

struct EventLedger {
    std::string chain_id;
    std::vector<BlockRecord> blocks;  // sorted by height
    std::map<Date, std::vector<BalanceRecord>> balance_snapshots;
    StudyWindow study_window{};
};

enum class ResourceKind { blocks, tokens };

inline const char* to_string(ResourceKind k) {
    return k == ResourceKind::blocks ? "blocks" : "tokens";
}

// One measured snapshot of resource ownership. `population` may contain
// entities with no entry; those count as holding zero, which matters for
// Gini and the party count.
struct ResourceDistribution {
    Instant snapshot{};
    std::map<std::string, std::uint64_t> entries;  // entity id -> amount
    std::set<std::string> population;
    ResourceKind resource_kind = ResourceKind::blocks;
};

inline void validate_distribution(const ResourceDistribution& d) {
    for (const auto& [id, amt] : d.entries) {
        (void)amt;
        if (!d.population.count(id))
            throw Error("distribution entry '" + id + "' missing from population");
    }
}

// Sum of all entry amounts; throws on 64-bit overflow rather than wrapping.
inline std::uint64_t total_amount(const ResourceDistribution& d) {
    std::uint64_t sum = 0;
    for (const auto& [id, amt] : d.entries) {
        (void)id;
        if (__builtin_add_overflow(sum, amt, &sum))
            throw Error("amount overflow while totaling distribution");
    }
    return sum;
}

// Amounts over the full population (zeros included), in population order.
inline std::vector<std::uint64_t> amount_vector(const ResourceDistribution& d) {
    std::vector<std::uint64_t> out;
    out.reserve(d.population.size());
    for (const auto& id : d.population) {
        auto it = d.entries.find(id);
        out.push_back(it == d.entries.end() ? 0 : it->second);
    }
    return out;
}

// Relative shares over the full population, ordered by share descending and
// entity id ascending on ties. Zero-amount population members appear at the
// tail with share 0, so the list length always equals the population size.
inline std::vector<std::pair<std::string, double>> shares(const ResourceDistribution& d) {
    std::uint64_t total = total_amount(d);
    if (total == 0) throw ZeroTotalError("cannot compute shares of an all-zero distribution");

    std::vector<std::pair<std::string, std::uint64_t>> rows;
    rows.reserve(d.population.size());
    for (const auto& id : d.population) {
        auto it = d.entries.find(id);
        rows.emplace_back(id, it == d.entries.end() ? 0 : it->second);
    }
    // Integer amounts give exact tie detection; ids break ties ascending.
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::pair<std::string, double>> out;
    out.reserve(rows.size());
    for (auto& [id, amt] : rows)
        out.emplace_back(std::move(id), double(amt) / double(total));
    return out;
}

struct MetricPoint {
    Instant snapshot{};
    double value = 0.0;
    std::size_t population_size = 0;
};

struct MetricSeries {
    std::string metric_name;
    std::vector<MetricPoint> points;  // ascending by snapshot
    std::string config_fingerprint;
};

struct LedgerStats {
    std::size_t blocks_in_window = 0;
    std::size_t blocks_dropped_outside_window = 0;
};

// Assembles a ledger, enforcing its invariants: blocks sorted by height with
// no duplicates, timestamps non-decreasing, out-of-window blocks dropped.
inline EventLedger make_ledger(std::string chain_id, std::vector<BlockRecord> blocks,
                               std::map<Date, std::vector<BalanceRecord>> snapshots,
                               StudyWindow window, LedgerStats* stats = nullptr,
                               Warnings* warnings = nullptr) {
    if (window.end <= window.start)
        throw Error("study window must satisfy start < end");
    std::sort(blocks.begin(), blocks.end(),
              [](const BlockRecord& a, const BlockRecord& b) { return a.height < b.height; });
    for (std::size_t i = 1; i < blocks.size(); ++i) {
        if (blocks[i].height == blocks[i - 1].height)
            throw DuplicateHeightError("duplicate block height " +
                                       std::to_string(blocks[i].height));
        if (blocks[i].timestamp < blocks[i - 1].timestamp)
            warn(warnings, "timestamp regression at height " + std::to_string(blocks[i].height));
    }
    std::vector<BlockRecord> kept;
    kept.reserve(blocks.size());
    std::size_t dropped = 0;
    for (auto& b : blocks) {
        if (window.contains(b.timestamp))
            kept.push_back(std::move(b));
        else
            ++dropped;
    }
    if (stats) {
        stats->blocks_in_window = kept.size();
        stats->blocks_dropped_outside_window = dropped;
    }
    if (dropped > 0)
        warn(warnings, std::to_string(dropped) + " block(s) outside the study window dropped");
    EventLedger ledger;
    ledger.chain_id = std::move(chain_id);
    ledger.blocks = std::move(kept);
    ledger.balance_snapshots = std::move(snapshots);
    ledger.study_window = window;
    return ledger;
}

}  // namespace decmet
